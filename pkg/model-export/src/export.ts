/**
 * Convert a pretrained vision-transformer image encoder into the
 * runtime-neutral pair the classification pipeline consumes:
 *
 *   model.onnx     float32 [1, 3, S, S] -> float32 [1, dim]
 *   manifest.json  { backend, model_path, input_size, channel_mean,
 *                    channel_std, output_head }
 *
 * Source checkpoints are hub-style ONNX encoder exports whose graph ends at
 * last_hidden_state [1, tokens, dim]. This tool grafts a small output head
 * onto that graph (class token or token mean), then refuses to emit anything
 * that fails verification: the exported model must have the exact signature
 * above, and its embeddings for five fixed synthetic images must match the
 * source runtime plus reference head math with cosine >= 0.999 per image.
 */

import * as fs from 'fs';
import * as path from 'path';
import { onnx } from 'onnx-proto';
import * as ort from 'onnxruntime-node';

export type OutputHead = 'class-token' | 'mean-pooled';

export interface Configuration {
  /** canonical name, e.g. "vit-s14" */
  name: string;
  /** embedding width the checkpoint produces */
  dim: number;
  /** default hub repo carrying the ONNX export of the checkpoint */
  repo: string;
}

/** The four supported encoder sizes and their embedding widths. */
export const CONFIGURATIONS: Record<string, Configuration> = {
  'vit-s14': { name: 'vit-s14', dim: 384, repo: 'Xenova/dinov2-small' },
  'vit-b14': { name: 'vit-b14', dim: 768, repo: 'Xenova/dinov2-base' },
  'vit-l14': { name: 'vit-l14', dim: 1024, repo: 'Xenova/dinov2-large' },
  'vit-g14': { name: 'vit-g14', dim: 1536, repo: 'Xenova/dinov2-giant' },
};

/** Accepts spellings like "ViT-S/14", "vit_s14", "vits14". */
export function normalizeConfigName(raw: string): string {
  const flat = raw.toLowerCase().replace(/[^a-z0-9]/g, '');
  for (const key of Object.keys(CONFIGURATIONS)) {
    if (key.replace(/[^a-z0-9]/g, '') === flat) return key;
  }
  throw new Error(
    `unknown configuration "${raw}" (expected one of ${Object.keys(CONFIGURATIONS).join(', ')})`,
  );
}

// Standard preprocessing of this encoder family; overridden by a
// preprocessor_config.json found next to the source model.
export const DEFAULT_MEAN: [number, number, number] = [0.485, 0.456, 0.406];
export const DEFAULT_STD: [number, number, number] = [0.229, 0.224, 0.225];
export const DEFAULT_INPUT_SIZE = 224;

export const PARITY_IMAGE_COUNT = 5;
export const PARITY_COSINE_FLOOR = 0.999;

export interface ExportRequest {
  configuration: string;
  outputHead: OutputHead;
  outDir: string;
  /** local .onnx file or directory holding model.onnx (skips the download) */
  source?: string;
  /** encoder input resolution; the published checkpoints use 224 */
  inputSize?: number;
}

export interface ExportResult {
  modelPath: string;
  manifestPath: string;
  dim: number;
  inputSize: number;
  /** per-image source-vs-export cosine from the parity gate */
  parity: number[];
}

// ---------------------------------------------------------------------------
// deterministic parity inputs

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Fixed synthetic test inputs: pseudo-random pixels, standardized. */
export function fixedTestImages(
  inputSize: number,
  mean: [number, number, number],
  std: [number, number, number],
  count = PARITY_IMAGE_COUNT,
): Float32Array[] {
  const images: Float32Array[] = [];
  for (let i = 0; i < count; i++) {
    const rand = mulberry32(0xc0ffee + i * 9973);
    const data = new Float32Array(3 * inputSize * inputSize);
    for (let c = 0; c < 3; c++) {
      const base = c * inputSize * inputSize;
      for (let p = 0; p < inputSize * inputSize; p++) {
        const pixel = Math.floor(rand() * 256) / 255;
        data[base + p] = (pixel - mean[c]) / std[c];
      }
    }
    images.push(data);
  }
  return images;
}

export function cosine(a: ArrayLike<number>, b: ArrayLike<number>): number {
  if (a.length !== b.length) {
    throw new Error(`cosine: length mismatch ${a.length} vs ${b.length}`);
  }
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}

/** Reference head math on the raw token tensor [1, tokens, dim] (float64). */
export function referenceHead(
  lastHidden: ArrayLike<number>,
  tokens: number,
  dim: number,
  head: OutputHead,
): Float64Array {
  const out = new Float64Array(dim);
  if (head === 'class-token') {
    for (let d = 0; d < dim; d++) out[d] = lastHidden[d];
    return out;
  }
  for (let t = 0; t < tokens; t++) {
    for (let d = 0; d < dim; d++) out[d] += lastHidden[t * dim + d];
  }
  for (let d = 0; d < dim; d++) out[d] /= tokens;
  return out;
}

// ---------------------------------------------------------------------------
// graph surgery

const EMBED_OUTPUT = 'embedding';
const FLOAT32 = 1; // onnx.TensorProto.DataType.FLOAT
const INT64 = 7;

function tensorValueInfo(name: string, dims: number[]): onnx.ValueInfoProto {
  return onnx.ValueInfoProto.create({
    name,
    type: onnx.TypeProto.create({
      tensorType: onnx.TypeProto.Tensor.create({
        elemType: FLOAT32,
        shape: onnx.TensorShapeProto.create({
          dim: dims.map((d) => onnx.TensorShapeProto.Dimension.create({ dimValue: d })),
        }),
      }),
    }),
  });
}

export function loadModelProto(file: string): onnx.ModelProto {
  return onnx.ModelProto.decode(new Uint8Array(fs.readFileSync(file)));
}

export function saveModelProto(model: onnx.ModelProto, file: string): void {
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, onnx.ModelProto.encode(model).finish());
}

function defaultOpset(model: onnx.ModelProto): number {
  let version = 0;
  for (const imp of model.opsetImport ?? []) {
    if (!imp.domain || imp.domain === 'ai.onnx') {
      version = Math.max(version, Number(imp.version ?? 0));
    }
  }
  return version || 13;
}

/** The token-tensor output the head hangs off: prefer last_hidden_state. */
function hiddenOutputName(graph: onnx.IGraphProto): string {
  const outputs = (graph.output ?? []).map((o) => o.name ?? '');
  if (outputs.includes('last_hidden_state')) return 'last_hidden_state';
  if (outputs.length === 1 && outputs[0]) return outputs[0];
  throw new Error(
    `cannot locate the token tensor: source outputs are [${outputs.join(', ')}], ` +
      'expected last_hidden_state or exactly one output',
  );
}

/**
 * Append the output head to the source graph in place and rewire the graph
 * output to the [1, dim] embedding.
 */
export function attachHead(model: onnx.ModelProto, head: OutputHead, dim: number): void {
  const graph = model.graph;
  if (!graph) throw new Error('source model has no graph');
  const hidden = hiddenOutputName(graph);
  const opset = defaultOpset(model);

  graph.node = graph.node ?? [];
  graph.initializer = graph.initializer ?? [];

  if (head === 'class-token') {
    graph.initializer.push(
      onnx.TensorProto.create({
        name: 'embed_head_token0',
        dataType: INT64,
        dims: [],
        int64Data: [0],
      }),
    );
    graph.node.push(
      onnx.NodeProto.create({
        name: 'embed_head_gather',
        opType: 'Gather',
        input: [hidden, 'embed_head_token0'],
        output: [EMBED_OUTPUT],
        attribute: [
          onnx.AttributeProto.create({
            name: 'axis',
            type: onnx.AttributeProto.AttributeType.INT,
            i: 1,
          }),
        ],
      }),
    );
  } else {
    // ReduceMean moved axes from attribute to input at opset 18.
    if (opset >= 18) {
      graph.initializer.push(
        onnx.TensorProto.create({
          name: 'embed_head_axes',
          dataType: INT64,
          dims: [1],
          int64Data: [1],
        }),
      );
      graph.node.push(
        onnx.NodeProto.create({
          name: 'embed_head_mean',
          opType: 'ReduceMean',
          input: [hidden, 'embed_head_axes'],
          output: [EMBED_OUTPUT],
          attribute: [
            onnx.AttributeProto.create({
              name: 'keepdims',
              type: onnx.AttributeProto.AttributeType.INT,
              i: 0,
            }),
          ],
        }),
      );
    } else {
      graph.node.push(
        onnx.NodeProto.create({
          name: 'embed_head_mean',
          opType: 'ReduceMean',
          input: [hidden],
          output: [EMBED_OUTPUT],
          attribute: [
            onnx.AttributeProto.create({
              name: 'axes',
              type: onnx.AttributeProto.AttributeType.INTS,
              ints: [1],
            }),
            onnx.AttributeProto.create({
              name: 'keepdims',
              type: onnx.AttributeProto.AttributeType.INT,
              i: 0,
            }),
          ],
        }),
      );
    }
  }
  graph.output = [tensorValueInfo(EMBED_OUTPUT, [1, dim])];
}

// ---------------------------------------------------------------------------
// source resolution

interface ResolvedSource {
  modelFile: string;
  mean: [number, number, number];
  std: [number, number, number];
  inputSize: number;
}

function readPreprocessorConfig(dir: string, fallbackSize: number): Omit<ResolvedSource, 'modelFile'> {
  const file = path.join(dir, 'preprocessor_config.json');
  let mean = DEFAULT_MEAN;
  let std = DEFAULT_STD;
  let inputSize = fallbackSize;
  if (fs.existsSync(file)) {
    const raw = JSON.parse(fs.readFileSync(file, 'utf-8'));
    if (Array.isArray(raw.image_mean) && raw.image_mean.length === 3) mean = raw.image_mean;
    if (Array.isArray(raw.image_std) && raw.image_std.length === 3) std = raw.image_std;
    const size = raw.crop_size ?? raw.size;
    if (typeof size === 'number') inputSize = size;
    else if (size && typeof size.height === 'number') inputSize = size.height;
    else if (size && typeof size.shortest_edge === 'number') inputSize = size.shortest_edge;
  }
  return { mean: mean as [number, number, number], std: std as [number, number, number], inputSize };
}

async function download(url: string, dest: string): Promise<void> {
  const res = await fetch(url);
  if (!res.ok) {
    throw new Error(`download failed: ${url} -> HTTP ${res.status}`);
  }
  fs.mkdirSync(path.dirname(dest), { recursive: true });
  fs.writeFileSync(dest, Buffer.from(await res.arrayBuffer()));
}

async function resolveSource(request: ExportRequest, cfg: Configuration): Promise<ResolvedSource> {
  const fallbackSize = request.inputSize ?? DEFAULT_INPUT_SIZE;
  if (request.source) {
    const src = request.source;
    let modelFile: string;
    if (fs.existsSync(src) && fs.statSync(src).isDirectory()) {
      modelFile = fs.existsSync(path.join(src, 'onnx', 'model.onnx'))
        ? path.join(src, 'onnx', 'model.onnx')
        : path.join(src, 'model.onnx');
    } else {
      modelFile = src;
    }
    if (!fs.existsSync(modelFile)) {
      throw new Error(`source model not found: ${modelFile}`);
    }
    const pre = readPreprocessorConfig(path.dirname(modelFile), fallbackSize);
    if (request.inputSize) pre.inputSize = request.inputSize;
    return { modelFile, ...pre };
  }

  const cacheDir = path.join(request.outDir, '.source', cfg.name);
  const modelFile = path.join(cacheDir, 'model.onnx');
  const base = `https://huggingface.co/${cfg.repo}/resolve/main`;
  try {
    if (!fs.existsSync(modelFile)) {
      await download(`${base}/onnx/model.onnx`, modelFile);
    }
    const preFile = path.join(cacheDir, 'preprocessor_config.json');
    if (!fs.existsSync(preFile)) {
      await download(`${base}/preprocessor_config.json`, preFile);
    }
  } catch (err: any) {
    throw new Error(
      `cannot obtain checkpoint ${cfg.repo} (pass --source for a local copy): ${err?.message ?? err}`,
    );
  }
  const pre = readPreprocessorConfig(cacheDir, fallbackSize);
  if (request.inputSize) pre.inputSize = request.inputSize;
  return { modelFile, ...pre };
}

// ---------------------------------------------------------------------------
// verification

async function embed(
  session: ort.InferenceSession,
  image: Float32Array,
  inputSize: number,
): Promise<{ data: Float32Array; dims: readonly number[] }> {
  const feeds: Record<string, ort.Tensor> = {
    [session.inputNames[0]]: new ort.Tensor('float32', image, [1, 3, inputSize, inputSize]),
  };
  const out = await session.run(feeds);
  const tensor = out[session.outputNames[0]];
  return { data: tensor.data as Float32Array, dims: tensor.dims };
}

// ---------------------------------------------------------------------------
// export

export async function exportEncoder(request: ExportRequest): Promise<ExportResult> {
  const cfg = CONFIGURATIONS[normalizeConfigName(request.configuration)];
  const source = await resolveSource(request, cfg);

  const model = loadModelProto(source.modelFile);
  attachHead(model, request.outputHead, cfg.dim);
  fs.mkdirSync(request.outDir, { recursive: true });
  const modelPath = path.join(request.outDir, 'model.onnx');
  saveModelProto(model, modelPath);

  // Signature gate: single input/output, output [1, dim].
  const exported = await ort.InferenceSession.create(modelPath);
  if (exported.inputNames.length !== 1 || exported.outputNames.length !== 1) {
    throw new Error(
      `signature verification failed: expected 1 input / 1 output, got ` +
        `${exported.inputNames.length}/${exported.outputNames.length}`,
    );
  }
  const images = fixedTestImages(source.inputSize, source.mean, source.std);
  const probe = await embed(exported, images[0], source.inputSize);
  if (probe.dims.length !== 2 || probe.dims[0] !== 1 || probe.dims[1] !== cfg.dim) {
    throw new Error(
      `signature verification failed: output shape [${probe.dims.join(', ')}], ` +
        `expected [1, ${cfg.dim}] for ${cfg.name}`,
    );
  }

  // Parity gate: source runtime + reference head math vs exported model.
  const sourceSession = await ort.InferenceSession.create(source.modelFile);
  const parity: number[] = [];
  for (const image of images) {
    const hidden = await embed(sourceSession, image, source.inputSize);
    if (hidden.dims.length !== 3 || hidden.dims[2] !== cfg.dim) {
      throw new Error(
        `source model produced token tensor [${hidden.dims.join(', ')}], ` +
          `expected [1, tokens, ${cfg.dim}]`,
      );
    }
    const want = referenceHead(hidden.data, hidden.dims[1], cfg.dim, request.outputHead);
    const got = await embed(exported, image, source.inputSize);
    parity.push(cosine(want, got.data));
  }
  const worst = Math.min(...parity);
  if (!(worst >= PARITY_COSINE_FLOOR)) {
    throw new Error(
      `parity verification failed: worst source-vs-export cosine ${worst} < ${PARITY_COSINE_FLOOR}`,
    );
  }

  const manifestPath = path.join(request.outDir, 'manifest.json');
  const manifest = {
    backend: 'interchange-model',
    model_path: 'model.onnx',
    input_size: source.inputSize,
    channel_mean: source.mean,
    channel_std: source.std,
    output_head: request.outputHead,
  };
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + '\n');

  return {
    modelPath,
    manifestPath,
    dim: cfg.dim,
    inputSize: source.inputSize,
    parity,
  };
}
