"""Radiance-field-assisted residual video coding.

Sender and receiver share a radiance field (a voxel volume or a Gaussian
splat cloud). Frames travel as a camera pose plus a coded residual against
the field's render, and a simple link model turns sizes into latency.
"""

from .camera import CameraIntrinsics, CameraPose, Ray, generate_ray, generate_rays, look_at
from .codec import CodecConfig, compression_savings, decode_delta, decode_key, encode_delta, encode_key
from .errors import BackendMismatchError, CodecError, DomainError, ManifestError, PacketError
from .metrics import psnr, ssim
from .netsim import LinkConfig, transmit
from .pipeline import RfBackend, RfPacket, rf_decode_stream, rf_encode_stream
from .splat import GaussianCloud, render_splats
from .volume import RadianceVolume, render_image

__version__ = "0.1.0"
