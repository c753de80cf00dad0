"""
The curriculum schedule
=======================

Segment length grows by half a second per block.  Late in each block the
identity weight halves and the learning rate starts to decay.
"""

from evcgan.curriculum import initial_state, schedule_trace

trace = schedule_trace(initial_state(max_length_s=2.0, epochs_per_block=500))
print(len(trace), "epochs")
for epoch, block, in_block, lr, alpha, beta, length in trace:
    if in_block in (1, 325, 326, 500):
        print(f"epoch {epoch:4d}  block {block}  lr {lr:.6e}  alpha {alpha}  beta {beta}  length {length} s")

base = schedule_trace(initial_state(2.0, 500, curriculum=False))
print("without curriculum:", len(base), "epochs at", base[0][6], "s")
