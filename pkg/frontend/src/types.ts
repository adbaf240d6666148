/** Shapes of the documented service API, as the server sends them. */

export interface ApiEnvelope<T> {
  request_id: string;
  tau_in: number;
  tau_out: number;
  latency_s: number;
  result?: T;
  error?: ApiErrorBody;
  trace?: TraceSummary;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  retriable: boolean;
  payload?: Record<string, unknown>;
}

export interface TraceSummary {
  request_class: string;
  executed_count: number;
  steps: { role: string; action: string; ok: boolean }[];
}

/** Per-nutrient amount maps; only fields the server tracked are present. */
export type NutrientAmounts = Record<string, number>;

export interface PlanView {
  user_id: string;
  date: string;
  targets: NutrientAmounts;
  consumed: NutrientAmounts;
  remaining: NutrientAmounts;
  remaining_core: NutrientAmounts;
  meals_logged: string[];
  meals_remaining: string[];
}

export interface MealAckResult {
  meal_id?: string;
  source?: string;
  analysis?: {
    items: [string, number, boolean][];
    nutrients: NutrientAmounts;
    confidence: number;
  };
  plan?: PlanView;
  remaining_core?: NutrientAmounts;
  clarification?: string;
}

export interface RecommendedItem {
  name: string;
  cuisine: string;
  portion_g: number;
  portion_scale: number;
  nutrients: NutrientAmounts;
}

export interface Recommendation {
  mealtime: string | null;
  items: RecommendedItem[];
  conservative: boolean;
  note: string;
}

export interface RecommendationResult {
  plan?: PlanView;
  recommendation?: Recommendation;
}

export interface Profile {
  user_id: string;
  sex: string;
  life_stage: string;
  cuisine_frequencies: Record<string, number>;
  allergies: string[];
  meal_habits: [string, number][];
  timezone: string;
  category_override: string | null;
}
