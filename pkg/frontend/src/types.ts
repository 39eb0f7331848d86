// Shapes of the session service's JSON documents. The UI never computes
// game quantities; everything rendered comes out of these.

export const ACTION_NAMES = ["keep", "accel", "decel", "left", "right", "stop"] as const;
export type ActionName = (typeof ACTION_NAMES)[number];

export interface ScenarioDoc {
  grid: { P: number; L: number; V: number };
  obstacles: number[][];
  goal: number[];
  goal_reward: number;
  T: number;
  sigma: number[];
  lambda: number;
  gamma: number;
  max_episode_steps: number;
}

export interface EpisodeStepDoc {
  t: number;
  x: number[];
  uL: number;
  uF: number;
  announced: number[] | null;
  driver_policy: number[] | null;
  predicted: number[] | null;
  reward: number;
  total: number;
}

export interface EpisodeDoc {
  scenario: ScenarioDoc;
  mode: string;
  sigma_mode: string;
  driver_type: number | null;
  x0: number[];
  steps: EpisodeStepDoc[];
  summary: {
    reached_goal: boolean;
    steps_to_goal: number | null;
    final_reward: number;
    reward_curve: number[];
  };
}

export interface SessionState {
  session_id: string;
  scenario: string;
  utility: string;
  mode: string;
  t: number;
  x: number[];
  awaiting: "driver_action" | "none";
  finished: boolean;
  reached_goal: boolean;
  seed: number;
  announced: number[] | null;
  predicted: number[] | null;
  history: unknown[];
  episode: EpisodeDoc;
}

export interface WhatIf {
  action: ActionName;
  x: number[];
  value: number;
}

export interface AssistDoc {
  session_id: string;
  t: number;
  x: number[];
  intent: number;
  announced: number[];
  predicted: number[];
  what_if: WhatIf[];
}

export interface AdaptDoc {
  utility: string;
  base: string;
  session: string;
  pairs: number;
  adapt_iters: number;
  seed: number;
}

export interface ApiErrorDoc {
  code: string;
  message: string;
}

export interface CreateBody {
  utility?: string;
  mode?: string;
  x0?: number[];
  seed?: number;
}
