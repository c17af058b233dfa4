"""Smoke test for the t2net extension module.

Build and install it first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import math
import sys
import tempfile
from pathlib import Path

import t2net


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        n = t2net.generate_dataset(str(data), slices=2, size=32, scale=2, seed=3)
        assert n == 2, n

        mask = t2net.cartesian_mask(32, 4.0, 0.125, seed=1)
        assert len(mask) == 32 and sum(mask) >= 4

        sample = sorted(data.glob("*.t2nt"))[0]
        lr, rec, sr, scale = t2net.load_sample(str(sample))
        assert scale == 2
        assert (len(lr), len(lr[0])) == (16, 16)
        assert (len(sr), len(sr[0])) == (32, 32)
        assert t2net.psnr(sr, sr, 1.0) == 100.0
        assert abs(t2net.ssim(sr, sr, 1.0) - 1.0) < 1e-9
        assert t2net.nmse(sr, sr) == 0.0

        net = t2net.T2Net(n_stages=1, channels=8, scale=2, seed=0)
        print(net, "params:", net.param_count)
        x_sr, x_rec = net.forward(lr)
        assert (len(x_sr), len(x_sr[0])) == (32, 32)
        assert x_rec is not None and len(x_rec) == 16

        losses = net.train(str(data), steps=5, lr=1e-3, batch=1)
        assert len(losses) == 5 and all(math.isfinite(v) for v in losses)
        print("losses:", ["%.4f" % v for v in losses])

        report = dict(net.evaluate(str(data)))
        for key in ("sr_psnr_db", "rec_psnr_db", "bicubic_psnr_db", "zero_filled_psnr_db"):
            assert math.isfinite(report[key]), key
        print("sr psnr: %.2f dB, bicubic %.2f dB" % (report["sr_psnr_db"], report["bicubic_psnr_db"]))

        ckpt = Path(tmp) / "model.ckpt"
        net.save(str(ckpt))
        again = t2net.T2Net.load(str(ckpt))
        assert again.forward(lr) == net.forward(lr)

        try:
            t2net.T2Net(variant="bogus")
        except ValueError:
            pass
        else:
            raise AssertionError("bad variant accepted")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
