"""drivepipe: real-time edge-conditioned frame stylization for driving simulation.

The package is organized around the stages of the live loop:

- frames: pixel buffers, replay manifests, resampling, PPM io
- conditioning: edge-map extraction (grayscale, blur, Sobel, hysteresis)
- stylizer: deterministic mock stylizer and the remote worker protocol
- wire / broker: binary envelope codec and the TCP pub/sub broker
- pipeline: latest-value scheduling, latency accounting, the run loop
- simworld: track model, kinematic vehicle, flat-shaded renderer
- evaluation: lap splitting and trajectory similarity metrics
"""

__version__ = "0.1.0"
