import numpy as np
import pytest
import torch

from conftest import fd_check
from heatrecon.domain import Readings, ScalarField, SensorLayout, make_grid
from heatrecon.encoding import NormStats, mask_encode, voronoi_encode
from heatrecon.models import (
    ARCHS,
    IPTRNet,
    ModelState,
    baseline_forward,
    build_model,
    init_parameters,
    iptr_forward,
    load_state,
    save_state,
)

torch.set_num_threads(1)


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def small_iptr(variant="full", seed=0):
    net = IPTRNet(latent_channels=8, lift_channels=8, modes1=3, modes2=3, variant=variant)
    init_parameters(net, seed)
    return net


class TestShapeContracts:
    def test_branch_shapes_at_64(self):
        net = IPTRNet(latent_channels=32, lift_channels=32, modes1=12, modes2=12)
        init_parameters(net, 0)
        v_t = torch.randn(1, 1, 64, 64)
        v_s = torch.randn(1, 1, 64, 64)
        t_s = torch.randn(1, 1, 64, 64)
        lat = net.monitor_encoder(v_t)
        assert lat.shape == (1, 32, 16, 16)
        e_p = net.aux(v_t)
        assert e_p.shape == (1, 1, 16, 16)
        out = net(v_t, v_s, t_s)
        assert out.shape == (1, 1, 64, 64)

    @pytest.mark.parametrize(
        "arch,channels", [("vor_unet", 1), ("vor_fno", 1), ("mask_unet", 2), ("mask_fno", 2)]
    )
    def test_baselines_preserve_resolution(self, arch, channels):
        st = build_model(arch, seed=1)
        out = st.module(torch.randn(2, channels, 64, 64))
        assert out.shape == (2, 1, 64, 64)

    def test_unknown_arch_rejected(self):
        with pytest.raises(ValueError):
            build_model("resnet")


class TestVariants:
    def test_variant_parameter_manifests(self):
        names_full = set(build_model("iptr", seed=0).parameter_names())
        names_no_aux = set(build_model("iptr", variant="no_aux", seed=0).parameter_names())
        names_no_imp = set(build_model("iptr", variant="no_implicit", seed=0).parameter_names())
        assert any(n.startswith("aux.") for n in names_full)
        assert not any(n.startswith("aux.") for n in names_no_aux)
        assert not any("encoder" in n for n in names_no_imp)
        assert any("encoder" in n for n in names_full)

    def test_all_variants_forward(self):
        x = torch.randn(1, 1, 16, 16)
        for variant in ("full", "no_aux", "no_implicit", "unet_aux"):
            net = small_iptr(variant)
            assert net(x, x, x).shape == (1, 1, 16, 16)

    def test_mismatched_resolutions_fail(self):
        net = small_iptr()
        with pytest.raises(RuntimeError):
            net(torch.randn(1, 1, 16, 16), torch.randn(1, 1, 32, 32), torch.randn(1, 1, 32, 32))


class TestForwardSemantics:
    def test_deterministic_forward(self):
        net = small_iptr()
        x = torch.randn(1, 1, 16, 16)
        with torch.no_grad():
            a = net(x, x.clone(), x.clone())
            b = net(x, x.clone(), x.clone())
        assert torch.equal(a, b)

    def test_seeded_build_is_reproducible(self):
        a = build_model("iptr", seed=7).module.state_dict()
        b = build_model("iptr", seed=7).module.state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)
        c = build_model("iptr", seed=8).module.state_dict()
        assert any(not torch.equal(a[k], c[k]) for k in a)

    def test_reference_field_influences_output(self):
        net = small_iptr()
        v_t = torch.randn(1, 1, 16, 16)
        v_s = torch.randn(1, 1, 16, 16)
        with torch.no_grad():
            out1 = net(v_t, v_s, torch.randn(1, 1, 16, 16))
            out2 = net(v_t, v_s, torch.randn(1, 1, 16, 16))
        assert (out1 - out2).abs().sum() > 0

    def test_aux_branch_is_live(self):
        # zeroing the auxiliary channel entering the decoder changes output
        net = small_iptr()
        v_t = torch.randn(1, 1, 16, 16)
        v_s = torch.randn(1, 1, 16, 16)
        t_s = torch.randn(1, 1, 16, 16)
        with torch.no_grad():
            q = net.monitor_encoder(v_t)
            baseline = net(v_t, v_s, t_s)
            e_p = net.aux(v_t)
        assert e_p.abs().sum() > 0
        # replace aux output with zeros by monkeypatching forward composition
        from heatrecon.nn import cross_attention, positional_embedding

        with torch.no_grad():
            k = net.monitor_encoder(v_s)
            v = net.field_encoder(t_s)
            b, c, h4, w4 = q.shape
            pos = positional_embedding(c, h4, w4).to(q.dtype).flatten(1).transpose(0, 1)
            i_p = cross_attention(
                q.flatten(2).transpose(1, 2) + pos, k.flatten(2).transpose(1, 2) + pos,
                v.flatten(2).transpose(1, 2),
            ).transpose(1, 2).reshape(b, c, h4, w4)
            zeroed = net.decoder(torch.cat([i_p, torch.zeros_like(e_p)], dim=1))
        assert (zeroed - baseline).abs().sum() > 0

    def test_every_parameter_group_receives_gradient(self):
        net = small_iptr()
        v_t = torch.randn(1, 1, 16, 16)
        v_s = torch.randn(1, 1, 16, 16)
        t_s = torch.randn(1, 1, 16, 16)
        loss = net(v_t, v_s, t_s).abs().mean()
        loss.backward()
        for name, p in net.named_parameters():
            assert p.grad is not None, name
            assert p.grad.abs().sum() > 0, f"dead parameter group: {name}"

    def test_full_model_gradients_vs_finite_differences(self):
        net = small_iptr().double()
        v_t = torch.randn(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
        v_s = torch.randn(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
        t_s = torch.randn(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
        proj = torch.randn(1, 1, 8, 8, dtype=torch.float64)
        tensors = [v_t, v_s, t_s] + list(net.parameters())
        fd_check(lambda: (net(v_t, v_s, t_s) * proj).sum(), tensors, n_coords=3)


class TestPseudoFieldOps:
    def _setup(self):
        g = make_grid(16, 16, 0.1, 0.1)
        layout = SensorLayout(((0.03, 0.03), (0.07, 0.06)))
        readings = Readings(layout, (0.2, 0.8))
        pf = voronoi_encode(readings, g)
        return g, readings, pf

    def test_iptr_forward_returns_normalized_field(self):
        g, readings, pf = self._setup()
        st = build_model("iptr", seed=0, latent_channels=8, lift_channels=8, modes1=3, modes2=3)
        t_s = ScalarField(g, np.random.default_rng(0).uniform(0, 1, (16, 16)), units="norm")
        out = iptr_forward(st, pf, pf, t_s)
        assert out.grid == g
        assert out.units == "norm"

    def test_iptr_forward_rejects_resolution_mismatch(self):
        g, readings, pf = self._setup()
        g2 = make_grid(32, 32, 0.1, 0.1)
        pf2 = voronoi_encode(Readings(SensorLayout(((0.05, 0.05),)), (0.5,)), g2)
        st = build_model("iptr", seed=0, latent_channels=8, lift_channels=8, modes1=3, modes2=3)
        t_s = ScalarField(g2, np.zeros((32, 32)), units="norm")
        with pytest.raises(ValueError):
            iptr_forward(st, pf, pf2, t_s)

    def test_baseline_forward_kind_checked(self):
        g, readings, pf = self._setup()
        mask_pf = mask_encode(readings, g)
        st_vor = build_model("vor_fno", seed=0, lift_channels=8, modes1=3, modes2=3)
        st_mask = build_model("mask_fno", seed=0, lift_channels=8, modes1=3, modes2=3)
        assert baseline_forward(st_vor, pf).grid == g
        assert baseline_forward(st_mask, mask_pf).grid == g
        with pytest.raises(ValueError):
            baseline_forward(st_vor, mask_pf)
        with pytest.raises(ValueError):
            baseline_forward(st_mask, pf)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        st = build_model("iptr", seed=3, stats=NormStats(290.0, 400.0), latent_channels=8,
                         lift_channels=8, modes1=3, modes2=3)
        save_state(st, tmp_path / "ckpt")
        st2 = load_state(tmp_path / "ckpt")
        assert st2.arch == "iptr" and st2.variant == "full"
        assert st2.stats == st.stats
        a, b = st.module.state_dict(), st2.module.state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_identity_arch_not_checkpointable(self, tmp_path):
        with pytest.raises(ValueError):
            save_state(build_model("vor_identity"), tmp_path / "x")

    def test_archs_catalog(self):
        assert set(ARCHS) == {"iptr", "vor_unet", "vor_fno", "mask_unet", "mask_fno", "vor_identity"}
