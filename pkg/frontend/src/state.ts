/**
 * Session view state: timeline reconstruction, client-side design validation
 * (mirroring the server's bounds), and the headless session controller that
 * both the page and the end-to-end tests drive.
 *
 * The console is stateless beyond the session id: every refresh rebuilds the
 * timeline from the server trace, and displayed numbers are always fetched.
 */

import {
  ApiClient,
  ObserveResponse,
  Packed,
  PosteriorResponse,
  SessionInfo,
  Trace,
  TraceStep,
} from "./api.js";

export interface ComponentBounds {
  lo: number | null;
  hi: number | null;
}

/** Design-domain bounds per simulator; null means "any finite value". */
export function designBounds(simulator: string): ComponentBounds {
  switch (simulator) {
    case "ces":
      return { lo: 0, hi: 100 };
    case "id":
      return { lo: 0, hi: 1 };
    default:
      return { lo: null, hi: null };
  }
}

/** Returns an error message for an invalid design edit, or null if fine. */
export function validateDesign(simulator: string, design: number[],
                               designDim: number): string | null {
  if (design.length !== designDim) {
    return `design needs ${designDim} components, got ${design.length}`;
  }
  const bounds = designBounds(simulator);
  for (const v of design) {
    if (!Number.isFinite(v)) return "design components must be finite numbers";
    if (bounds.lo !== null && v < bounds.lo) return `components must be >= ${bounds.lo}`;
    if (bounds.hi !== null && v > bounds.hi) return `components must be <= ${bounds.hi}`;
  }
  return null;
}

export interface TimelineEntry {
  t: number;
  design: number[];
  observation: Packed;
  source: string;
}

/** The rendered timeline is exactly the server trace, step for step. */
export function timelineFromTrace(trace: Trace): TimelineEntry[] {
  return trace.steps.map((s: TraceStep) => ({
    t: s.t,
    design: s.design,
    observation: s.observation,
    source: s.design_source,
  }));
}

/** Evenly thin a sample list down to at most `max` entries. */
export function downsample<T>(items: T[], max: number): T[] {
  if (items.length <= max) return items;
  const out: T[] = [];
  const stride = items.length / max;
  for (let i = 0; i < max; i++) out.push(items[Math.floor(i * stride)]);
  return out;
}

export interface ControllerView {
  session: SessionInfo | null;
  timeline: TimelineEntry[];
  pending: number[] | null;
  posterior: PosteriorResponse | null;
  lastObserve: ObserveResponse | null;
  error: string | null;
}

/**
 * Headless controller for one session.  UI buttons call these methods; the
 * end-to-end parity test drives them directly.
 */
export class SessionController {
  view: ControllerView = { session: null, timeline: [], pending: null,
                           posterior: null, lastObserve: null, error: null };

  constructor(private client: ApiClient, private posteriorSamples = 256) {}

  get sessionId(): string {
    if (!this.view.session) throw new Error("no active session");
    return this.view.session.session_id;
  }

  async start(body: { checkpoint?: string; mode?: string; seed?: number;
                      horizon?: number } = {}): Promise<ControllerView> {
    this.view.session = await this.client.createSession(body);
    this.view.pending = null;
    await this.refresh();
    await this.fetchPosterior();  // step-0 view of the prior approximation
    return this.view;
  }

  /**
   * Reattach to an existing session (page reload): the whole view is rebuilt
   * from the server's session info, trace, and posterior endpoints.
   */
  async resume(sessionId: string): Promise<ControllerView> {
    this.view.session = await this.client.sessionInfo(sessionId);
    this.view.pending = this.view.session.pending_design;
    await this.refresh();
    await this.fetchPosterior();
    return this.view;
  }

  /** Re-pull the trace; the local timeline never diverges from the server. */
  async refresh(): Promise<void> {
    const trace = await this.client.trace(this.sessionId);
    this.view.timeline = timelineFromTrace(trace);
  }

  async proposeNext(): Promise<number[]> {
    const out = await this.client.propose(this.sessionId);
    this.view.pending = out.design;
    return out.design;
  }

  /** Accept the pending proposal as-is (simulated mode). */
  async acceptPending(): Promise<ObserveResponse> {
    return this.finishStep({});
  }

  /**
   * Submit an edited design.  Domain violations are blocked client-side with
   * the same bounds the server enforces; no request is sent.
   */
  async overridePending(design: number[]): Promise<ObserveResponse> {
    const session = this.view.session!;
    const problem = validateDesign(session.simulator, design, session.design_dim);
    if (problem) {
      this.view.error = problem;
      throw new Error(problem);
    }
    return this.finishStep({ design_override: design });
  }

  /** External mode: forward the real instrument reading. */
  async submitObservation(observation: Packed, override?: number[]):
      Promise<ObserveResponse> {
    const body: { observation: Packed; design_override?: number[] } = { observation };
    if (override) body.design_override = override;
    return this.finishStep(body);
  }

  private async finishStep(body: { design_override?: number[];
                                   observation?: Packed }): Promise<ObserveResponse> {
    const out = await this.client.observe(this.sessionId, body);
    this.view.lastObserve = out;
    this.view.pending = null;
    this.view.error = null;
    await this.refresh();
    await this.fetchPosterior();
    return out;
  }

  async fetchPosterior(seed?: number): Promise<PosteriorResponse> {
    this.view.posterior = await this.client.posterior(
      this.sessionId, this.posteriorSamples, seed);
    return this.view.posterior;
  }

  get done(): boolean {
    const s = this.view.session;
    return !!s && this.view.timeline.length >= s.horizon;
  }
}
