import { App } from "./app.js";
import { SessionStore } from "./store.js";
import { WsTransport } from "./transport.js";

function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");

  const proto = location.protocol === "https:" ? "wss" : "ws";
  const wsUrl = `${proto}://${location.host}/ws`;

  const store = new SessionStore({
    fetchLog: async () => {
      const resp = await fetch("/log");
      if (!resp.ok) throw new Error(`GET /log: ${resp.status}`);
      return resp.text();
    },
    onChange: () => app.markDirty(),
  });
  const app = new App(store, root);
  const transport = new WsTransport(wsUrl, {
    onOpen: () => store.handleOpen(),
    onMessage: (text) => store.handleMessage(text),
    onDown: (retryInMs) => store.handleDown(retryInMs),
  });
  store.attach(transport);
  app.start();
}

window.addEventListener("load", boot);
