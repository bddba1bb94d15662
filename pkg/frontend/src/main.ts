// Browser entry point. The teleop server speaks raw TCP, which browsers
// cannot open, so point this panel at the ws bridge (npm run bridge) and
// pass the bridge URL as ?server=ws://host:port.

import { JogClient } from "./client.js";
import { Panel } from "./panel.js";
import { connectWebSocket } from "./transport.js";

function serverUrl(): string {
  const param = new URLSearchParams(window.location.search).get("server");
  return param ?? "ws://127.0.0.1:7620";
}

const root = document.getElementById("panel");
if (root === null) throw new Error("missing #panel element");

let transportSend: (line: string) => boolean = () => false;
const client = new JogClient({ send: (line) => transportSend(line) });
const panel = new Panel(root, client);

const transport = connectWebSocket(serverUrl(), {
  onConnect: () => client.connected(),
  onDisconnect: () => client.disconnected(),
  onLine: (line) => client.feedLine(line),
});
transportSend = (line) => transport.send(line);

// render loop decoupled from message arrival
setInterval(() => panel.render(client.state), 50);

window.addEventListener("beforeunload", () => {
  panel.repeater.releaseAll();
  transport.close();
});
