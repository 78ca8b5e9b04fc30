"""Build the libav-backed codec extension.

Links against the system FFmpeg development libraries (libavformat,
libavcodec, libavutil, libswscale); pkg-config must be able to find them.
"""

import subprocess

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

PKGS = ["libavformat", "libavcodec", "libavutil", "libswscale"]


def pkg_config(args):
    out = subprocess.check_output(["pkg-config"] + args + PKGS, text=True)
    return out.split()


ext = Pybind11Extension(
    "vidpipe._codec",
    ["src/vidpipe/_codec/codec.cpp"],
    cxx_std=17,
    extra_compile_args=pkg_config(["--cflags"]) + ["-O2"],
    extra_link_args=pkg_config(["--libs"]),
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
