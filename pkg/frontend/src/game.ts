/** Game screen state, decoupled from DOM and timers for testability.
 *
 * The agent owns all scoring; this model only tracks the target shown to
 * the player and mirrors whatever the agent replies. The game-over total is
 * read straight from the agent's exported session document.
 */

import type { ApiClient, GameRoundReply, GameSessionDoc } from "./api.js";

export type GamePhase = "idle" | "running" | "over";

export class GameModel {
  phase: GamePhase = "idle";
  target: string | null = null;
  roundsPlayed = 0;
  totalSoFar = 0;
  lastRound: GameRoundReply["round"] | null = null;
  session: GameSessionDoc | null = null;
  timeLimitS = 90;
  roundLengthS = 5;

  constructor(private api: ApiClient) {}

  async start(seed: number): Promise<string> {
    const reply = await this.api.gameStart(seed);
    this.phase = "running";
    this.target = reply.target;
    this.roundsPlayed = 0;
    this.totalSoFar = 0;
    this.lastRound = null;
    this.session = null;
    this.timeLimitS = reply.time_limit_s;
    this.roundLengthS = reply.round_length_s;
    return reply.target;
  }

  /** Submit the end-of-round image; ends the session when the agent says so. */
  async submitRound(ppm: Uint8Array): Promise<GameRoundReply> {
    const reply = await this.api.gameRound(ppm);
    this.lastRound = reply.round;
    this.roundsPlayed = reply.rounds_played;
    this.totalSoFar = reply.total_so_far;
    this.target = reply.next_target;
    if (reply.over) await this.end();
    return reply;
  }

  async end(): Promise<GameSessionDoc> {
    const { session } = await this.api.gameEnd();
    this.session = session;
    this.phase = "over";
    this.target = null;
    return session;
  }

  /** What the Game Over screen shows: the agent's total, nothing recomputed. */
  get displayedTotal(): number {
    return this.session ? this.session.total_score : this.totalSoFar;
  }

  get displayedHighScore(): number | null {
    return this.session ? this.session.high_score : null;
  }
}
