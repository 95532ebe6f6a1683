/**
 * Browser entry point.
 *
 * URL parameters:
 *   ?bridge=ws://host:port   WebSocket byte bridge in front of the gateway
 *                            (default ws://<page host>:8765)
 *   ?trial=<trial_id>        open straight into playback of that trial
 */

import { PlaybackModel, TrialData } from "./playback";
import { ConsoleSession } from "./session";
import { DashboardView } from "./view";

function connect(): void {
  const params = new URLSearchParams(window.location.search);
  const bridgeUrl =
    params.get("bridge") ?? `ws://${window.location.hostname || "127.0.0.1"}:8765`;

  let ws: WebSocket | null = null;
  let retryMs = 500;

  const transport = {
    send(bytes: Uint8Array): void {
      if (ws !== null && ws.readyState === WebSocket.OPEN) {
        ws.send(bytes);
      }
    },
  };

  const session = new ConsoleSession(transport);
  const view = new DashboardView(document, session, {
    sendControl: (name, args) => session.sendControl(name, args ?? {}),
    loadTrial: (trialId) => void loadTrial(trialId),
  });
  document.body.appendChild(view.root);

  async function loadTrial(trialId: string): Promise<void> {
    const outcome = await session.sendControl("get_trial", { trial_id: trialId });
    if (outcome.ok) {
      view.enterPlayback(new PlaybackModel(outcome.payload as unknown as TrialData));
    }
  }

  function open(): void {
    ws = new WebSocket(bridgeUrl);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      retryMs = 500;
      session.connect();
      const trialId = params.get("trial");
      if (trialId !== null) void loadTrial(trialId);
    };
    ws.onmessage = (event) => {
      session.ingest(new Uint8Array(event.data as ArrayBuffer));
    };
    ws.onclose = () => {
      setTimeout(open, retryMs);
      retryMs = Math.min(retryMs * 2, 8000);
      view.render(); // surfaces the stale banner
    };
  }

  open();
  // keep the stale banner honest even when no messages arrive
  setInterval(() => view.render(), 1000);

  // drive playback when playing
  let lastTick = performance.now();
  setInterval(() => {
    const now = performance.now();
    const dt = (now - lastTick) / 1000;
    lastTick = now;
    if (view.playback !== null && view.playback.playing) {
      view.playback.advance(dt, Number(params.get("rate") ?? 1));
      view.render();
    }
  }, 50);
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  connect();
}
