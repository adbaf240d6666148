import { NutriloopClient } from './api';
import type { PlanView } from './types';
import type { PendingUpload } from './upload';

/**
 * Per-user browser session: the selected day, the last plan fetched from the
 * server, and any in-flight uploads. The session never derives nutrition
 * numbers itself; refresh() replaces the cached plan with server truth.
 */
export class UiSession {
  plan: PlanView | null = null;
  pendingUploads: PendingUpload[] = [];

  constructor(
    public client: NutriloopClient,
    public selectedDate: string,
  ) {}

  get userId(): string {
    return this.client.userId;
  }

  async refreshPlan(): Promise<PlanView> {
    this.plan = await this.client.getPlan(this.selectedDate);
    return this.plan;
  }
}
