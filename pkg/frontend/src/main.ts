/**
 * Page wiring: session controls, proposal editor, timeline, posterior panel.
 * Poll-based refresh only; one tab drives one session.
 */

import { ApiClient, ApiError, decodePacked } from "./api.js";
import {
  renderHistograms,
  renderImageGrid,
  renderMeasurements,
  renderScatter,
  renderTimeline,
} from "./render.js";
import { designBounds, SessionController, validateDesign } from "./state.js";

const client = new ApiClient("");
const controller = new SessionController(client, 512);

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const els = {
  mode: $("mode") as unknown as HTMLSelectElement,
  seed: $("seed") as unknown as HTMLInputElement,
  start: $("start-btn") as unknown as HTMLButtonElement,
  banner: $("banner"),
  meta: $("session-meta"),
  propose: $("propose-btn") as unknown as HTMLButtonElement,
  accept: $("accept-btn") as unknown as HTMLButtonElement,
  sendOverride: $("override-btn") as unknown as HTMLButtonElement,
  designInputs: $("design-inputs"),
  obsRow: $("obs-row"),
  obsInput: $("obs-input") as unknown as HTMLInputElement,
  validation: $("validation"),
  timeline: $("timeline"),
  posteriorPanel: $("posterior-panel"),
  posteriorMeta: $("posterior-meta"),
  scatter: $("scatter") as unknown as HTMLCanvasElement,
  histograms: $("histograms"),
  imageGrid: $("image-grid") as unknown as HTMLCanvasElement,
  measurements: $("measurements") as unknown as HTMLCanvasElement,
};

function setBanner(text: string, isError: boolean): void {
  els.banner.textContent = text;
  els.banner.className = isError ? "banner error" : "banner";
}

function readDesignInputs(): number[] {
  return Array.from(els.designInputs.querySelectorAll("input"))
    .map((inp) => Number((inp as HTMLInputElement).value));
}

function showProposal(design: number[] | null): void {
  const session = controller.view.session;
  if (!session) return;
  els.designInputs.innerHTML = "";
  const bounds = designBounds(session.simulator);
  (design ?? new Array(session.design_dim).fill(0)).forEach((v) => {
    const inp = document.createElement("input");
    inp.type = "number";
    inp.step = "0.01";
    if (bounds.lo !== null) inp.min = String(bounds.lo);
    if (bounds.hi !== null) inp.max = String(bounds.hi);
    inp.value = v.toFixed(4);
    inp.disabled = design === null;
    els.designInputs.appendChild(inp);
  });
  els.accept.disabled = design === null;
  els.sendOverride.disabled = design === null;
  els.propose.disabled = design !== null || controller.done;
}

function redraw(): void {
  const { session, timeline, posterior } = controller.view;
  if (!session) return;
  els.meta.textContent =
    `session ${session.session_id.slice(0, 8)} | ${session.preset} | ` +
    `${session.mode} | seed ${session.seed} | step ${timeline.length}` +
    `/${session.horizon}`;
  renderTimeline(els.timeline, timeline);
  els.obsRow.style.display = session.mode === "external" ? "flex" : "none";

  if (!posterior) return;
  els.posteriorMeta.textContent =
    `posterior at step ${posterior.t} (n=${posterior.n})`;
  const sim = session.simulator;
  els.scatter.style.display = sim === "lf" ? "block" : "none";
  els.histograms.style.display = sim === "ces" ? "flex" : "none";
  els.imageGrid.style.display = sim === "id" ? "block" : "none";
  els.measurements.style.display = sim === "id" ? "block" : "none";
  if (sim === "lf") {
    const truth = session.theta ? Array.from(decodePacked(session.theta).data) : null;
    renderScatter(els.scatter, posterior, truth);
  } else if (sim === "ces") {
    renderHistograms(els.histograms, posterior,
                     ["rho", "alpha1", "alpha2", "alpha3", "log u"]);
  } else {
    renderImageGrid(els.imageGrid, posterior);
    renderMeasurements(els.measurements,
                       controller.view.timeline.map((e) => e.observation),
                       controller.view.timeline.map((e) => e.design));
  }
}

async function guard<T>(work: () => Promise<T>): Promise<T | null> {
  try {
    const out = await work();
    setBanner("", false);
    return out;
  } catch (err) {
    if (err instanceof ApiError) {
      setBanner(`service error [${err.code}]: ${err.message}`, true);
    } else {
      setBanner(String(err), true);
    }
    return null;
  }
}

els.start.onclick = () => guard(async () => {
  const seed = els.seed.value === "" ? undefined : Number(els.seed.value);
  await controller.start({ mode: els.mode.value, seed });
  window.location.hash = `sid=${controller.sessionId}`;
  showProposal(null);
  redraw();
});

els.propose.onclick = () => guard(async () => {
  const design = await controller.proposeNext();
  showProposal(design);
});

els.accept.onclick = () => guard(async () => {
  const session = controller.view.session!;
  if (session.mode === "external") {
    await controller.submitObservation(Number(els.obsInput.value));
  } else {
    await controller.acceptPending();
  }
  showProposal(null);
  redraw();
});

els.sendOverride.onclick = () => guard(async () => {
  const session = controller.view.session!;
  const edited = readDesignInputs();
  const problem = validateDesign(session.simulator, edited, session.design_dim);
  els.validation.textContent = problem ?? "";
  if (problem) return null;  // blocked client-side, no request
  if (session.mode === "external") {
    await controller.submitObservation(Number(els.obsInput.value), edited);
  } else {
    await controller.overridePending(edited);
  }
  showProposal(null);
  redraw();
  return null;
});

// Poll so a reloaded tab (or a concurrent viewer) converges to server state.
setInterval(() => {
  if (controller.view.session) {
    guard(async () => {
      await controller.refresh();
      redraw();
    });
  }
}, 2000);

guard(() => client.health()).then(async (ok) => {
  if (!ok) {
    setBanner("rollout service unreachable; no session started", true);
    return;
  }
  // A reload reconstructs the exact view from the session id in the URL.
  const match = window.location.hash.match(/sid=([0-9a-f]+)/);
  if (match) {
    await guard(async () => {
      await controller.resume(match[1]);
      showProposal(controller.view.pending);
      redraw();
    });
  }
});
