#!/usr/bin/env python3
# Copyright 2026 The ServeSim Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Generates the synthetic traces, workload and preset configs shipped in the repo.

Latencies follow simple roofline-shaped formulas for an 80 GB accelerator so the
simulator has realistic magnitudes without a profiling run. Output is
deterministic.
"""

import argparse
import csv
import json
import math
import pathlib
import random

HW = "a100-80g"
TP_DEGREES = (1, 2, 4)
PREFILL_TOKENS = (1, 16, 64, 256, 512, 1024, 2048, 4096, 8192)
DECODE_SEQS = (1, 2, 4, 8, 16, 32, 64, 128, 256)
CONTEXTS = (0, 128, 512, 1024, 2048, 4096, 8192)
EXPERT_TOKENS = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384)

LLAMA = {
    "model_id": "llama3.1-8b",
    "layer_count": 32,
    "hidden_size": 4096,
    "dtype_bytes": 2,
    "kv_bytes_per_token_per_layer": 4096,
    "weight_bytes": 16_060_000_000,
}

MOE = {
    "model_id": "phi-mini-moe",
    "layer_count": 32,
    "hidden_size": 4096,
    "dtype_bytes": 2,
    "kv_bytes_per_token_per_layer": 4096,
    "weight_bytes": 15_200_000_000,
    "moe": {"expert_count": 16, "top_k": 2, "expert_weight_bytes": 27_262_976},
}


def us(x):
  return max(1, int(round(x)))


def dense_rows(model_id, with_ffn):
  rows = []
  for tp in TP_DEGREES:
    for t in PREFILL_TOKENS:
      for c in CONTEXTS:
        rows.append((model_id, "attention", "prefill", t, c, tp,
                     us(8 + (0.45 * t + 0.00012 * t * (c + t / 2)) / tp)))
        if with_ffn:
          rows.append((model_id, "ffn", "prefill", t, c, tp, us(10 + 1.2 * t / tp)))
        rows.append((model_id, "norm", "prefill", t, c, tp, us(3 + 0.02 * t)))
        rows.append((model_id, "embedding", "prefill", t, c, tp, us(5 + 0.01 * t)))
        rows.append((model_id, "lm_head", "prefill", t, c, tp, us(20 + 0.25 * t / tp)))
    for s in DECODE_SEQS:
      for c in CONTEXTS:
        rows.append((model_id, "attention", "decode", s, c, tp, us((40 + 0.0027 * s * c) / tp + 4)))
        if with_ffn:
          rows.append((model_id, "ffn", "decode", s, c, tp, us((200 + 0.8 * s) / tp + 3)))
        rows.append((model_id, "norm", "decode", s, c, tp, us(3 + 0.02 * s)))
        rows.append((model_id, "embedding", "decode", s, c, tp, us(5 + 0.01 * s)))
        rows.append((model_id, "lm_head", "decode", s, c, tp, us(60 / tp + 0.25 * s / tp + 2)))
  return rows


def expert_rows(model_id):
  rows = []
  for n in EXPERT_TOKENS:
    rows.append((model_id, "expert_ffn", "prefill", n, 0, 1, us(17 + 0.08 * n)))
    rows.append((model_id, "expert_ffn", "decode", n, 0, 1, us(17 + 0.1 * n)))
  return rows


def write_trace(path, meta, rows):
  with open(path, "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["model_id", "hw_id", "op_kind", "phase", "batch", "context", "tp_degree", "latency_us"])
    for model_id, op, phase, b, c, tp, lat in rows:
      w.writerow([model_id, HW, op, phase, b, c, tp, lat])
  with open(path.with_suffix(".meta.json"), "w") as f:
    json.dump(meta, f, indent=2)
    f.write("\n")


def lognormal_int(rng, mean, sigma, lo, hi):
  mu = math.log(mean) - sigma * sigma / 2
  return max(lo, min(hi, int(rng.lognormvariate(mu, sigma))))


def write_workload(path, count, seed):
  rng = random.Random(seed)
  prompts = [[rng.randrange(32000) for _ in range(n)] for n in (128, 256, 384, 512)]
  lines = ["request_id,input_len,output_len"]
  tokens = []
  for rid in range(count):
    suffix = lognormal_int(rng, 220, 0.8, 8, 1536)
    out = lognormal_int(rng, 160, 0.7, 8, 512)
    ids = []
    if rng.random() < 0.6:
      ids.extend(rng.choice(prompts))
    ids.extend(rng.randrange(32000) for _ in range(suffix))
    lines.append(f"{rid},{len(ids)},{out}")
    tokens.append(f"{rid}: " + " ".join(map(str, ids)))
  path.write_text("\n".join(lines) + "\n")
  pathlib.Path(str(path) + ".tokens").write_text("\n".join(tokens) + "\n")


def memory():
  return {
      "device_bytes": 80 * 2**30,
      "bandwidth_bytes_per_s": 2.0e12,
      "host_bytes": 64 * 2**30,
      "host_link_bytes_per_s": 32e9,
      "reserved_bytes": 8 * 2**30,
  }


def instance(iid, role, model, devices, tp, moe=None):
  spec = {
      "id": iid,
      "role": role,
      "model": model,
      "hardware": HW,
      "devices": devices,
      "tp": tp,
      "pp": 1,
      "dp": 1,
      "memory": memory(),
      "scheduler": {"policy": "fifo", "max_batch_tokens": 8192, "max_batch_seqs": 256, "prefill_chunk": 512},
  }
  if moe:
    spec["moe"] = moe
  return spec


def preset(instances, devices, router="round_robin", pd=None):
  cfg = {
      "schema": "servesim.config/v1",
      "seed": 42,
      "topology": {"kind": "fully_connected", "devices": devices, "bandwidth_bytes_per_s": 300e9, "latency_us": 2},
      "instances": instances,
      "router": {"policy": router},
      "prefix_cache": {"enabled": False, "shared": False, "block_size": 16, "eviction": "lru"},
      "workload": {"arrival_rate_per_s": 10.0},
      "metrics": {"throughput_window": "full"},
  }
  if pd:
    cfg["pd"] = pd
  return cfg


def write_presets(out):
  llama = LLAMA["model_id"]
  moe_model = MOE["model_id"]
  moe = {"ep": 2, "gate": "uniform", "offload": "none", "offloaded_fraction": 0.0}
  pd = {"transfer": "full_blocking", "pairing": "least_tokens", "select_at": "prefill_complete"}
  presets = {
      "sd": preset([instance(0, "unified", llama, [0], 1)], [0]),
      "sm": preset([instance(0, "unified", moe_model, [0, 1], 2, moe)], [0, 1]),
      "md": preset([instance(0, "unified", llama, [0], 1), instance(1, "unified", llama, [1], 1)], [0, 1],
                   router="least_tokens"),
      "mm": preset([instance(0, "unified", moe_model, [0, 1], 2, moe),
                    instance(1, "unified", moe_model, [2, 3], 2, moe)], [0, 1, 2, 3], router="least_tokens"),
      "pdd": preset([instance(0, "prefill", llama, [0], 1), instance(1, "decode", llama, [1], 1)], [0, 1], pd=pd),
      "pdm": preset([instance(0, "prefill", moe_model, [0, 1], 2, moe),
                     instance(1, "decode", moe_model, [2, 3], 2, moe)], [0, 1, 2, 3], pd=pd),
  }
  for name, cfg in presets.items():
    (out / f"{name}.json").write_text(json.dumps(cfg, indent=2) + "\n")
    pc = json.loads(json.dumps(cfg))
    pc["prefix_cache"]["enabled"] = True
    if name in ("md", "mm"):
      pc["router"]["policy"] = "prefix_aware"
    (out / f"{name}_pc.json").write_text(json.dumps(pc, indent=2) + "\n")


def main():
  parser = argparse.ArgumentParser(description=__doc__)
  parser.add_argument("--root", type=pathlib.Path, default=pathlib.Path(__file__).resolve().parent.parent)
  parser.add_argument("--seed", type=int, default=20260101)
  args = parser.parse_args()
  traces = args.root / "traces" / "synthetic"
  workloads = args.root / "workloads"
  presets = args.root / "configs" / "presets"
  for d in (traces, workloads, presets):
    d.mkdir(parents=True, exist_ok=True)
  write_trace(traces / "llama3.1-8b.csv", LLAMA, dense_rows(LLAMA["model_id"], True))
  write_trace(traces / "phi-mini-moe.csv", MOE, dense_rows(MOE["model_id"], False) + expert_rows(MOE["model_id"]))
  write_workload(workloads / "sharegpt_like_100.csv", 100, args.seed)
  write_presets(presets)


if __name__ == "__main__":
  main()
