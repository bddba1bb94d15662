// Line-framed transports feeding the session event queue. Node uses a raw
// TCP socket (tests, scripted sessions, the ws bridge); the browser build
// uses a WebSocket carrying one protocol line per message.

export interface TransportEvents {
  onConnect: () => void;
  onDisconnect: () => void;
  onLine: (line: string) => void;
}

export interface LineTransport {
  send(line: string): boolean; // false when not connected (caller warns)
  close(): void;
}

export interface RetryOptions {
  reconnectDelayMs?: number;
  autoReconnect?: boolean;
}

export async function connectTcp(
  host: string,
  port: number,
  events: TransportEvents,
  options: RetryOptions = {},
): Promise<LineTransport> {
  const net = await import("node:net");
  const delay = options.reconnectDelayMs ?? 500;
  const auto = options.autoReconnect ?? true;
  let socket: import("node:net").Socket | null = null;
  let closed = false;
  let buffer = "";

  const open = () => {
    if (closed) return;
    const s = net.createConnection({ host, port });
    socket = s;
    s.setNoDelay(true);
    s.on("connect", () => events.onConnect());
    s.on("data", (chunk: Buffer) => {
      buffer += chunk.toString("utf-8");
      let idx;
      while ((idx = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, idx);
        buffer = buffer.slice(idx + 1);
        if (line.trim().length > 0) events.onLine(line);
      }
    });
    const drop = () => {
      if (socket !== s) return;
      socket = null;
      buffer = "";
      events.onDisconnect();
      if (!closed && auto) setTimeout(open, delay);
    };
    s.on("error", () => {
      /* 'close' always follows */
    });
    s.on("close", drop);
  };
  open();

  return {
    send(line: string): boolean {
      if (socket === null || socket.connecting || socket.destroyed) return false;
      socket.write(line + "\n");
      return true;
    },
    close(): void {
      closed = true;
      socket?.destroy();
      socket = null;
    },
  };
}

export function connectWebSocket(
  url: string,
  events: TransportEvents,
  options: RetryOptions = {},
): LineTransport {
  const delay = options.reconnectDelayMs ?? 500;
  const auto = options.autoReconnect ?? true;
  let ws: WebSocket | null = null;
  let closed = false;

  const open = () => {
    if (closed) return;
    const s = new WebSocket(url);
    ws = s;
    s.onopen = () => events.onConnect();
    s.onmessage = (msg: MessageEvent) => {
      for (const line of String(msg.data).split("\n")) {
        if (line.trim().length > 0) events.onLine(line);
      }
    };
    s.onclose = () => {
      if (ws !== s) return;
      ws = null;
      events.onDisconnect();
      if (!closed && auto) setTimeout(open, delay);
    };
    s.onerror = () => {
      /* onclose follows */
    };
  };
  open();

  return {
    send(line: string): boolean {
      if (ws === null || ws.readyState !== WebSocket.OPEN) return false;
      ws.send(line);
      return true;
    },
    close(): void {
      closed = true;
      ws?.close();
      ws = null;
    },
  };
}
