// WebSocket <-> TCP bridge so the browser panel can reach the teleop server.
// Usage: node dist/bridge.js [wsPort] [tcpHost] [tcpPort]

import net from "node:net";
import { WebSocketServer, WebSocket } from "ws";

const wsPort = Number(process.argv[2] ?? 7620);
const tcpHost = process.argv[3] ?? "127.0.0.1";
const tcpPort = Number(process.argv[4] ?? 7465);

const server = new WebSocketServer({ port: wsPort });
console.log(`bridge: ws://0.0.0.0:${wsPort} <-> tcp ${tcpHost}:${tcpPort}`);

server.on("connection", (ws: WebSocket) => {
  const tcp = net.createConnection({ host: tcpHost, port: tcpPort });
  tcp.setNoDelay(true);
  let buffer = "";
  tcp.on("data", (chunk) => {
    buffer += chunk.toString("utf-8");
    let idx;
    while ((idx = buffer.indexOf("\n")) >= 0) {
      const line = buffer.slice(0, idx);
      buffer = buffer.slice(idx + 1);
      if (line.length > 0 && ws.readyState === WebSocket.OPEN) ws.send(line);
    }
  });
  tcp.on("close", () => ws.close());
  tcp.on("error", () => ws.close());
  ws.on("message", (data) => {
    const text = data.toString();
    tcp.write(text.endsWith("\n") ? text : text + "\n");
  });
  ws.on("close", () => tcp.destroy());
});
