"""
Training on the synthetic two-emotion corpus
============================================

Emotion A has a low, nearly flat pitch; emotion B is higher and swings
widely.  A shortened run (two blocks of 20 epochs) already lowers the
cycle loss and moves converted pitch toward B.  The acceptance settings
use 50 epochs per block.
"""

import json
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from evcgan import cli, dsp
from evcgan.audio import read_wav
from evcgan.toy import TOY_TRAINING_CONFIG, make_toy_corpus
from evcgan.trainer import TrainingRunConfig, load_corpus, train

warnings.simplefilter("ignore", dsp.BoundaryWarning)
work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="evc_demo_"))

manifest = make_toy_corpus(work / "corpus", n_per_emotion=10, seed=0)
print(cli.run_extract(manifest, work / "cache", workers=2))

cfg = TrainingRunConfig.from_dict({**TOY_TRAINING_CONFIG, "epochs_per_block": 20,
                                   "run_dir": str(work / "run"), "seed": 0})
result = train(cfg, load_corpus(manifest, work / "cache"))
first, last = result.history[0], result.history[-1]
print(f"L_cyc {first['l_cyc']:.3f} -> {last['l_cyc']:.3f} over {result.epochs_run} epochs")


def median_f0(path):
    x, sr = read_wav(path)
    t = dsp.track_f0(x, sr)
    return float(np.median(t.values[t.voicing]))


src = manifest.parent / "A000.wav"
out = work / "A000_to_B.wav"
cli.main(["convert", "--checkpoint", str(work / "run"), "--direction", "a2b", str(src), str(out)])
print(f"median F0 {median_f0(src):.1f} Hz -> {median_f0(out):.1f} Hz")
print("outputs in", work)
print(json.dumps({"log": str(result.log_path)}))
