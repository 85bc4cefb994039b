/**
 * CLI: serve a feature extractor over the FMV1 protocol.
 *
 *   serve --model reference --weights weights.json --listen 127.0.0.1:8331
 *   serve --model reference --weights weights.json --stdio
 *   serve --model layers:path/to/model.json --listen 0.0.0.0:8331
 *
 * `reference` loads convnet weights exported by the embedding toolkit;
 * `layers:` loads a tfjs LayersModel as the backbone.
 */

import { loadWeights, ReferenceConvnet } from "./convnet.js";
import { loadBackbone } from "./backbone.js";
import { serveStdio, serveTcp, type ServedModel } from "./server.js";

interface Args {
  model: string;
  weights?: string;
  listen?: string;
  stdio: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { model: "reference", stdio: false };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--model":
        args.model = argv[++i];
        break;
      case "--weights":
        args.weights = argv[++i];
        break;
      case "--listen":
        args.listen = argv[++i];
        break;
      case "--stdio":
        args.stdio = true;
        break;
      case "serve":
        break;
      default:
        throw new Error(`unknown argument: ${argv[i]}`);
    }
  }
  if (!args.stdio && !args.listen) {
    throw new Error("choose a transport: --listen HOST:PORT or --stdio");
  }
  return args;
}

async function buildModel(args: Args): Promise<ServedModel> {
  if (args.model === "reference") {
    if (!args.weights) throw new Error("reference model needs --weights FILE");
    return new ReferenceConvnet(loadWeights(args.weights));
  }
  if (args.model.startsWith("layers:")) {
    return loadBackbone(args.model.slice("layers:".length));
  }
  throw new Error(`unknown model spec: ${args.model}`);
}

async function main() {
  const args = parseArgs(process.argv.slice(2));
  const model = await buildModel(args);
  if (args.stdio) {
    process.stderr.write(`serving d=${model.latentDim} on stdio\n`);
    serveStdio(model);
    return;
  }
  const [host, portStr] = args.listen!.split(":");
  serveTcp(model, host, Number(portStr), (port) => {
    process.stderr.write(`serving d=${model.latentDim} on ${host}:${port}\n`);
  });
}

main().catch((e) => {
  process.stderr.write(`error: ${e instanceof Error ? e.message : e}\n`);
  process.exit(1);
});
