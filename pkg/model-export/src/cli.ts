#!/usr/bin/env node
import { CONFIGURATIONS, ExportRequest, OutputHead, exportEncoder } from './export';

function usage(): never {
  console.error(
    'usage: model-export --config <vit-s14|vit-b14|vit-l14|vit-g14> ' +
      '--head <class-token|mean-pooled> --out <dir> [--source <path>] [--input-size <px>]',
  );
  process.exit(1);
}

function parseArgs(argv: string[]): ExportRequest {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key?.startsWith('--') || value === undefined) usage();
    args[key.slice(2)] = value;
  }
  if (!args.config || !args.out) usage();
  const head = (args.head ?? 'class-token') as OutputHead;
  if (head !== 'class-token' && head !== 'mean-pooled') usage();
  return {
    configuration: args.config,
    outputHead: head,
    outDir: args.out,
    source: args.source,
    inputSize: args['input-size'] ? Number(args['input-size']) : undefined,
  };
}

async function main(): Promise<void> {
  const request = parseArgs(process.argv.slice(2));
  console.log(`configurations: ${Object.keys(CONFIGURATIONS).join(', ')}`);
  console.log(`exporting ${request.configuration} (${request.outputHead}) -> ${request.outDir}`);
  const result = await exportEncoder(request);
  console.log(`model:    ${result.modelPath}`);
  console.log(`manifest: ${result.manifestPath}`);
  console.log(`dim:      ${result.dim}, input ${result.inputSize}x${result.inputSize}`);
  console.log(
    `parity:   ${result.parity.map((c) => c.toFixed(6)).join(' ')} (floor 0.999, ${result.parity.length} images)`,
  );
}

main().catch((err) => {
  console.error(`error: ${err?.message ?? err}`);
  process.exit(1);
});
