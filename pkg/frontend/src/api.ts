import type {
  ApiEnvelope,
  MealAckResult,
  PlanView,
  Profile,
  Recommendation,
  RecommendationResult,
} from './types';

export class ApiRequestError extends Error {
  constructor(
    message: string,
    public status: number,
    public code: string,
    public retriable: boolean,
  ) {
    super(message);
  }
}

export interface MealSubmission {
  date: string;
  mealtime: string;
  mealId?: string;
  text?: string;
  image?: File | Blob;
  imageName?: string;
}

/** Thin typed client over the documented HTTP endpoints; no local math. */
export class NutriloopClient {
  constructor(
    private baseUrl: string,
    private token: string,
    public userId: string,
  ) {}

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    return { 'x-api-token': this.token, ...extra };
  }

  private async unwrap<T>(response: Response): Promise<T> {
    const body = (await response.json()) as ApiEnvelope<T>;
    if (!response.ok || body.error) {
      const err = body.error;
      throw new ApiRequestError(
        err?.message ?? `request failed with HTTP ${response.status}`,
        response.status,
        err?.code ?? 'unknown',
        err?.retriable ?? false,
      );
    }
    return body.result as T;
  }

  async getPlan(date?: string): Promise<PlanView> {
    const query = date ? `?date=${encodeURIComponent(date)}` : '';
    const response = await fetch(`${this.baseUrl}/users/${this.userId}/plan${query}`, {
      headers: this.headers(),
    });
    const result = await this.unwrap<{ plan: PlanView }>(response);
    return result.plan;
  }

  async logMeal(submission: MealSubmission): Promise<MealAckResult> {
    const form = new FormData();
    const meta: Record<string, string> = {
      date: submission.date,
      mealtime: submission.mealtime,
    };
    if (submission.mealId) meta.meal_id = submission.mealId;
    if (submission.text) meta.text = submission.text;
    form.append('meta', JSON.stringify(meta));
    if (submission.image) {
      form.append('image', submission.image, submission.imageName ?? 'meal.jpg');
    }
    const response = await fetch(`${this.baseUrl}/users/${this.userId}/meals`, {
      method: 'POST',
      headers: this.headers(),
      body: form,
    });
    return this.unwrap<MealAckResult>(response);
  }

  async getRecommendation(date?: string): Promise<{ recommendation: Recommendation; plan?: PlanView }> {
    const response = await fetch(`${this.baseUrl}/users/${this.userId}/recommendation`, {
      method: 'POST',
      headers: this.headers({ 'content-type': 'application/json' }),
      body: JSON.stringify(date ? { date } : {}),
    });
    const result = await this.unwrap<RecommendationResult>(response);
    return { recommendation: result.recommendation as Recommendation, plan: result.plan };
  }

  async chat(text: string): Promise<Record<string, unknown>> {
    const response = await fetch(`${this.baseUrl}/chat`, {
      method: 'POST',
      headers: this.headers({ 'content-type': 'application/json' }),
      body: JSON.stringify({ text, user_id: this.userId }),
    });
    return this.unwrap<Record<string, unknown>>(response);
  }

  async getProfile(): Promise<Profile> {
    const response = await fetch(`${this.baseUrl}/users/${this.userId}/profile`, {
      headers: this.headers(),
    });
    const result = await this.unwrap<{ profile: Profile }>(response);
    return result.profile;
  }

  async putProfile(profile: Profile): Promise<Profile> {
    const response = await fetch(`${this.baseUrl}/users/${this.userId}/profile`, {
      method: 'PUT',
      headers: this.headers({ 'content-type': 'application/json' }),
      body: JSON.stringify(profile),
    });
    const result = await this.unwrap<{ profile: Profile }>(response);
    return result.profile;
  }
}
