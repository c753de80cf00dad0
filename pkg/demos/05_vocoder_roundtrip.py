"""
Analysis and resynthesis
========================

Features go back to audio through a minimum-phase source-filter vocoder.
The round-trip report compares the original features with those of the
resynthesized signal.
"""

import warnings

import numpy as np

from evcgan import dsp
from evcgan.features import FeatureSet
from evcgan.synthesis import analysis_synthesis_roundtrip, spectral_flatness, synthesize
from evcgan.toy import synth_vowel

warnings.simplefilter("ignore", dsp.BoundaryWarning)

x = synth_vowel(np.full(300, 100.0))
print(analysis_synthesis_roundtrip(x, 16000))

# unvoiced frames with a flat envelope give white noise
n = 400
silent = FeatureSet(cwt=dsp.CwtScales(np.zeros((10, n), np.float32), 0.0, 1.0),
                    envelope=dsp.SpectralEnvelope(np.zeros((n, 513), np.float32), 1024, 16000),
                    voicing=np.zeros(n, bool))
print("flatness of unvoiced output", round(spectral_flatness(synthesize(silent)), 3))
