"""
Integer spikes, binary spikes and a fused RepConv
=================================================

An I-LIF neuron emits integers in [0, D] during training. At inference each
integer unrolls into D binary sub-steps. With fixed-point weights both views
give the same pre-activations bit for bit.
"""
import numpy as np

from spiketrack.spiking import (SpikeMode, SpikeNet, SpikeTensor, encode_direct, expand_to_spikes,
                                ilif, init_conv, init_repconv, quantize_conv, repconv, repconv_fuse)

rng = np.random.default_rng(0)

# membrane trace of one neuron over four steps
x = np.array([0.3, 2.6, 7.0, -1.0]).reshape(4, 1)
s, u = ilif(x, d_max=4, return_membrane=True)
print("input  ", x.ravel())
print("spikes ", s.ravel())
print("membrane before reset", u.ravel())

# integer 3 with D = 4 becomes 1,1,1,0
t = SpikeTensor(np.array([3.0, 0.0]).reshape(1, 1, 2, 1, 1), SpikeMode.INTEGER, 4)
print("expanded", expand_to_spikes(t).data.reshape(4, 2).T)

# the two execution modes of a small network
net = SpikeNet([quantize_conv(init_conv(rng, "standard", 3, 4, 3, bias=True, gain=2.0, dtype=np.float64)),
                quantize_conv(init_conv(rng, "pointwise", 4, 2, 1, bias=True, dtype=np.float64))])
img = encode_direct(rng.uniform(0, 4, (1, 3, 6, 6)), 2).astype(np.float64)
a = net.preactivations(img, SpikeMode.INTEGER)
b = net.preactivations(img, SpikeMode.BINARY)
print("identical pre-activations:", all(np.array_equal(p, q) for p, q in zip(a, b)))

# pointwise -> depthwise 3x3 -> pointwise folds into one 3x3 convolution
spec = init_repconv(rng, 4, 4, 8)
fused = repconv_fuse(spec)
y = rng.normal(size=(2, 1, 4, 9, 9))
print("fused kernel", fused.weight.shape, "max diff", np.abs(repconv(fused, y) - repconv(spec, y)).max())
