// Tiny ws <-> tcp bridge: browsers cannot open raw TCP sockets, so this
// relays newline-delimited JSON between a WebSocket client and the motion
// service. Usage: node bridge.js [wsPort=7070] [tcpHost=127.0.0.1] [tcpPort=7060]
import { createServer } from "node:http";
import { connect } from "node:net";
import { createHash } from "node:crypto";

const wsPort = Number(process.argv[2] ?? 7070);
const tcpHost = process.argv[3] ?? "127.0.0.1";
const tcpPort = Number(process.argv[4] ?? 7060);

const GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

const server = createServer();
server.on("upgrade", (req, sock) => {
  const key = req.headers["sec-websocket-key"];
  const accept = createHash("sha1").update(key + GUID).digest("base64");
  sock.write(
    "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n" +
      `Connection: Upgrade\r\nSec-WebSocket-Accept: ${accept}\r\n\r\n`,
  );
  const tcp = connect(tcpPort, tcpHost);
  tcp.on("data", (buf) => sock.write(frame(buf)));
  tcp.on("close", () => sock.end());
  let pending = Buffer.alloc(0);
  sock.on("data", (buf) => {
    pending = Buffer.concat([pending, buf]);
    let out;
    while ((out = unframe(pending))) {
      tcp.write(out.payload);
      pending = out.rest;
    }
  });
  sock.on("close", () => tcp.end());
  sock.on("error", () => tcp.end());
});

function frame(payload) {
  const len = payload.length;
  let header;
  if (len < 126) {
    header = Buffer.from([0x81, len]);
  } else if (len < 65536) {
    header = Buffer.alloc(4);
    header[0] = 0x81;
    header[1] = 126;
    header.writeUInt16BE(len, 2);
  } else {
    header = Buffer.alloc(10);
    header[0] = 0x81;
    header[1] = 127;
    header.writeBigUInt64BE(BigInt(len), 2);
  }
  return Buffer.concat([header, payload]);
}

function unframe(buf) {
  if (buf.length < 2) return null;
  let len = buf[1] & 0x7f;
  let off = 2;
  if (len === 126) {
    if (buf.length < 4) return null;
    len = buf.readUInt16BE(2);
    off = 4;
  } else if (len === 127) {
    if (buf.length < 10) return null;
    len = Number(buf.readBigUInt64BE(2));
    off = 10;
  }
  const masked = (buf[1] & 0x80) !== 0;
  const maskLen = masked ? 4 : 0;
  if (buf.length < off + maskLen + len) return null;
  let payload = buf.subarray(off + maskLen, off + maskLen + len);
  if (masked) {
    const mask = buf.subarray(off, off + 4);
    payload = Buffer.from(payload.map((b, i) => b ^ mask[i % 4]));
  }
  return { payload, rest: buf.subarray(off + maskLen + len) };
}

server.listen(wsPort, () => {
  console.log(`ws://127.0.0.1:${wsPort} <-> tcp ${tcpHost}:${tcpPort}`);
});
