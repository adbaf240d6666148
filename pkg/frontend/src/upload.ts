import { ApiRequestError, MealSubmission, NutriloopClient } from './api';
import type { MealAckResult } from './types';

export type UploadStatus = 'uploading' | 'done' | 'duplicate' | 'queued' | 'failed';

export interface PendingUpload {
  id: string;
  submission: MealSubmission;
  status: UploadStatus;
  attempts: number;
  notice?: string;
  result?: MealAckResult;
}

export interface UploadQueueOptions {
  maxRetries?: number;
  backoffMs?: number;
  onChange?: (uploads: PendingUpload[]) => void;
}

/**
 * Meal submissions with optimistic pending state and a retry queue.
 *
 * Duplicate submissions (409) surface a notice and never retry; retriable
 * failures (backend 502, network loss) back off and retry, then park in the
 * queue for a manual retry.
 */
export class MealUploadQueue {
  private uploads: PendingUpload[] = [];
  private counter = 0;
  private maxRetries: number;
  private backoffMs: number;
  private onChange?: (uploads: PendingUpload[]) => void;

  constructor(private client: NutriloopClient, options: UploadQueueOptions = {}) {
    this.maxRetries = options.maxRetries ?? 3;
    this.backoffMs = options.backoffMs ?? 300;
    this.onChange = options.onChange;
  }

  pending(): PendingUpload[] {
    return [...this.uploads];
  }

  hasQueued(): boolean {
    return this.uploads.some((u) => u.status === 'queued');
  }

  private notify(): void {
    this.onChange?.(this.pending());
  }

  async submit(submission: MealSubmission): Promise<PendingUpload> {
    this.counter += 1;
    const upload: PendingUpload = {
      id: `upload-${this.counter}`,
      submission,
      status: 'uploading',
      attempts: 0,
    };
    this.uploads.push(upload);
    this.notify();
    await this.run(upload);
    return upload;
  }

  /** Re-attempt everything parked in the queue (e.g. after coming online). */
  async retryQueued(): Promise<void> {
    for (const upload of this.uploads.filter((u) => u.status === 'queued')) {
      upload.status = 'uploading';
      upload.attempts = 0;
      this.notify();
      await this.run(upload);
    }
  }

  private async run(upload: PendingUpload): Promise<void> {
    while (upload.attempts <= this.maxRetries) {
      upload.attempts += 1;
      try {
        upload.result = await this.client.logMeal(upload.submission);
        upload.status = 'done';
        this.notify();
        return;
      } catch (error) {
        if (error instanceof ApiRequestError) {
          if (error.status === 409) {
            upload.status = 'duplicate';
            upload.notice = 'This meal was already logged; nothing was double-counted.';
            this.notify();
            return;
          }
          if (!error.retriable) {
            upload.status = 'failed';
            upload.notice = error.message;
            this.notify();
            return;
          }
        }
        // Retriable server failure or network loss (fetch TypeError).
        if (upload.attempts > this.maxRetries) break;
        this.notify();
        await delay(this.backoffMs * upload.attempts);
      }
    }
    upload.status = 'queued';
    upload.notice = 'Upload failed; queued for retry.';
    this.notify();
  }
}

function delay(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
