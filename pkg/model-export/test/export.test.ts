import assert from 'node:assert/strict';
import { test } from 'node:test';
import { execFileSync } from 'node:child_process';
import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';
import * as ort from 'onnxruntime-node';

import {
  CONFIGURATIONS,
  PARITY_COSINE_FLOOR,
  exportEncoder,
  fixedTestImages,
} from '../src/export';
import { buildTinySource } from './tiny-model';

const INPUT = 16;
const TOKENS = 5;

function tmpdir(tag: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `model-export-${tag}-`));
}

function writePreprocessorConfig(dir: string) {
  fs.writeFileSync(
    path.join(dir, 'preprocessor_config.json'),
    JSON.stringify({
      image_mean: [0.485, 0.456, 0.406],
      image_std: [0.229, 0.224, 0.225],
      crop_size: INPUT,
    }),
  );
}

for (const name of Object.keys(CONFIGURATIONS)) {
  test(`export ${name}: dim, signature, manifest, parity`, async () => {
    const dim = CONFIGURATIONS[name].dim;
    const srcDir = tmpdir(`src-${name}`);
    buildTinySource({ inputSize: INPUT, tokens: TOKENS, dim }, path.join(srcDir, 'model.onnx'));
    writePreprocessorConfig(srcDir);

    const outDir = tmpdir(`out-${name}`);
    const result = await exportEncoder({
      configuration: name,
      outputHead: 'class-token',
      outDir,
      source: srcDir,
    });

    assert.equal(result.dim, dim);
    assert.equal(result.inputSize, INPUT);
    assert.equal(result.parity.length, 5);
    for (const c of result.parity) assert.ok(c >= PARITY_COSINE_FLOOR, `cosine ${c}`);

    // Exported signature: one input, one output, output [1, dim].
    const session = await ort.InferenceSession.create(result.modelPath);
    assert.equal(session.inputNames.length, 1);
    assert.equal(session.outputNames.length, 1);
    const image = fixedTestImages(INPUT, [0.485, 0.456, 0.406], [0.229, 0.224, 0.225], 1)[0];
    const out = await session.run({
      [session.inputNames[0]]: new ort.Tensor('float32', image, [1, 3, INPUT, INPUT]),
    });
    assert.deepEqual(Array.from(out[session.outputNames[0]].dims), [1, dim]);

    // Manifest sidecar: exactly the keys the pipeline's encoder reads.
    const manifest = JSON.parse(fs.readFileSync(result.manifestPath, 'utf-8'));
    assert.deepEqual(Object.keys(manifest).sort(), [
      'backend',
      'channel_mean',
      'channel_std',
      'input_size',
      'model_path',
      'output_head',
    ]);
    assert.equal(manifest.backend, 'interchange-model');
    assert.equal(manifest.model_path, 'model.onnx');
    assert.equal(manifest.input_size, INPUT);
    assert.deepEqual(manifest.channel_mean, [0.485, 0.456, 0.406]);
    assert.deepEqual(manifest.channel_std, [0.229, 0.224, 0.225]);
    assert.equal(manifest.output_head, 'class-token');
  });
}

test('the two output heads disagree on purpose', async () => {
  const srcDir = tmpdir('src-heads');
  buildTinySource({ inputSize: INPUT, tokens: TOKENS, dim: 384 }, path.join(srcDir, 'model.onnx'));
  writePreprocessorConfig(srcDir);

  const embeddings: Float32Array[] = [];
  for (const head of ['class-token', 'mean-pooled'] as const) {
    const outDir = tmpdir(`out-${head}`);
    const result = await exportEncoder({ configuration: 'vit-s14', outputHead: head, outDir, source: srcDir });
    const session = await ort.InferenceSession.create(result.modelPath);
    const image = fixedTestImages(INPUT, [0.485, 0.456, 0.406], [0.229, 0.224, 0.225], 1)[0];
    const out = await session.run({
      [session.inputNames[0]]: new ort.Tensor('float32', image, [1, 3, INPUT, INPUT]),
    });
    embeddings.push(out[session.outputNames[0]].data as Float32Array);

    const manifest = JSON.parse(fs.readFileSync(result.manifestPath, 'utf-8'));
    assert.equal(manifest.output_head, head);
  }
  assert.notDeepEqual(Array.from(embeddings[0]), Array.from(embeddings[1]));
});

test('mean-pooled head works on an opset 18 source (axes as input)', async () => {
  const srcDir = tmpdir('src-op18');
  buildTinySource(
    { inputSize: INPUT, tokens: TOKENS, dim: 768, opset: 18 },
    path.join(srcDir, 'model.onnx'),
  );
  const result = await exportEncoder({
    configuration: 'vit-b14',
    outputHead: 'mean-pooled',
    outDir: tmpdir('out-op18'),
    source: srcDir,
    inputSize: INPUT,
  });
  assert.equal(result.dim, 768);
  for (const c of result.parity) assert.ok(c >= PARITY_COSINE_FLOOR);
});

test('dim mismatch between configuration and source is refused', async () => {
  const srcDir = tmpdir('src-mismatch');
  // Source produces 100-wide tokens; vit-s14 declares 384.
  buildTinySource({ inputSize: INPUT, tokens: TOKENS, dim: 100 }, path.join(srcDir, 'model.onnx'));
  writePreprocessorConfig(srcDir);
  await assert.rejects(
    exportEncoder({
      configuration: 'vit-s14',
      outputHead: 'class-token',
      outDir: tmpdir('out-mismatch'),
      source: srcDir,
    }),
    /signature verification failed/,
  );
});

test('missing source model reports a load failure', async () => {
  await assert.rejects(
    exportEncoder({
      configuration: 'vit-s14',
      outputHead: 'class-token',
      outDir: tmpdir('out-missing'),
      source: path.join(tmpdir('src-missing'), 'nope.onnx'),
    }),
    /source model not found/,
  );
});

test('defaults apply when no preprocessor config is present', async () => {
  const srcDir = tmpdir('src-defaults');
  buildTinySource({ inputSize: INPUT, tokens: TOKENS, dim: 384 }, path.join(srcDir, 'model.onnx'));
  const result = await exportEncoder({
    configuration: 'vit-s14',
    outputHead: 'class-token',
    outDir: tmpdir('out-defaults'),
    source: srcDir,
    inputSize: INPUT,
  });
  const manifest = JSON.parse(fs.readFileSync(result.manifestPath, 'utf-8'));
  assert.deepEqual(manifest.channel_mean, [0.485, 0.456, 0.406]);
  assert.deepEqual(manifest.channel_std, [0.229, 0.224, 0.225]);
  assert.equal(manifest.input_size, INPUT);
});

test('cli exports end to end', () => {
  const srcDir = tmpdir('src-cli');
  buildTinySource({ inputSize: INPUT, tokens: TOKENS, dim: 384 }, path.join(srcDir, 'model.onnx'));
  writePreprocessorConfig(srcDir);
  const outDir = tmpdir('out-cli');
  const stdout = execFileSync(
    process.execPath,
    [
      path.join(__dirname, '..', 'src', 'cli.js'),
      '--config', 'ViT-S/14',
      '--head', 'class-token',
      '--out', outDir,
      '--source', srcDir,
    ],
    { encoding: 'utf-8' },
  );
  assert.match(stdout, /dim:\s+384/);
  assert.match(stdout, /parity:/);
  assert.ok(fs.existsSync(path.join(outDir, 'model.onnx')));
  assert.ok(fs.existsSync(path.join(outDir, 'manifest.json')));
});

test('cli rejects unknown configurations', () => {
  assert.throws(() =>
    execFileSync(
      process.execPath,
      [path.join(__dirname, '..', 'src', 'cli.js'), '--config', 'vit-huge', '--head', 'class-token', '--out', tmpdir('x')],
      { encoding: 'utf-8', stdio: 'pipe' },
    ),
  );
});

test('manifest is accepted by the pipeline package', async () => {
  // Cross-package contract check: the Python side must parse and validate
  // the sidecar this tool writes. Skipped when that package is absent.
  const probe = (code: string) =>
    execFileSync('python3', ['-c', code], { encoding: 'utf-8', stdio: 'pipe' });
  try {
    probe('import refsearch');
  } catch {
    return; // pipeline package not installed here
  }
  const srcDir = tmpdir('src-py');
  buildTinySource({ inputSize: INPUT, tokens: TOKENS, dim: 384 }, path.join(srcDir, 'model.onnx'));
  writePreprocessorConfig(srcDir);
  const outDir = tmpdir('out-py');
  await exportEncoder({ configuration: 'vit-s14', outputHead: 'mean-pooled', outDir, source: srcDir });
  const out = probe(
    'from refsearch.encoder import load_manifest\n' +
      `m = load_manifest(${JSON.stringify(path.join(outDir, 'manifest.json'))})\n` +
      'print(m.backend, m.input_size, m.output_head, m.model_path)',
  );
  assert.match(out, /interchange-model 16 mean-pooled/);
  assert.match(out, /model\.onnx/);
});
