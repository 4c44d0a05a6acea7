/**
 * One-shot JSON pipe: a request on stdin, a reply on stdout.
 * The boundary carries only integer arrays and base64 byte buffers.
 */

import { probe } from "./probe";
import { CdfSpec, fastDecode, fastEncode } from "./rangecoder";

interface Request {
  op: "probe" | "encode" | "decode";
  table?: CdfSpec;
  symbols?: number[];
  data_b64?: string;
  n?: number;
}

function readStdin(): Promise<string> {
  return new Promise((resolveInput, reject) => {
    const chunks: Buffer[] = [];
    process.stdin.on("data", (c) => chunks.push(c));
    process.stdin.on("end", () => resolveInput(Buffer.concat(chunks).toString("utf-8")));
    process.stdin.on("error", reject);
  });
}

async function main(): Promise<number> {
  try {
    const req = JSON.parse(await readStdin()) as Request;
    if (req.op === "probe") {
      process.stdout.write(JSON.stringify({ ok: true, capabilities: probe() }));
      return 0;
    }
    if (!req.table) throw new Error("missing table spec");
    if (req.op === "encode") {
      const data = fastEncode(req.symbols ?? [], req.table);
      process.stdout.write(
        JSON.stringify({ ok: true, data_b64: Buffer.from(data).toString("base64") })
      );
      return 0;
    }
    if (req.op === "decode") {
      const data = new Uint8Array(Buffer.from(req.data_b64 ?? "", "base64"));
      const symbols = fastDecode(data, req.table, req.n ?? 0);
      process.stdout.write(JSON.stringify({ ok: true, symbols: Array.from(symbols) }));
      return 0;
    }
    throw new Error(`unknown op ${(req as { op: string }).op}`);
  } catch (err) {
    // errors travel in-band so the caller gets a structured reply
    process.stdout.write(JSON.stringify({ ok: false, error: String(err) }));
    return 0;
  }
}

main().then((code) => process.exit(code));
