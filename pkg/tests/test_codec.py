"""End-to-end tests for the container, node/I-frame blocks and the sequence codec."""

import numpy as np
import pytest
from pydantic import ValidationError

from lib.codec.config import CodecConfig, RDConfig, RDStrategy, ToggleConfig
from lib.codec.container import HEADER_SIZE, ByteReader, ByteWriter, StreamHeader
from lib.codec.decoder import decode_sequence
from lib.codec.encoder import encode_sequence
from lib.codec.nodes import decode_iframe, decode_nodes, decoded_iframe, encode_iframe, encode_nodes, quantize_nodes
from lib.coding.entropy import snap_step
from lib.errors import BadMagic, ConfigError, CorruptBlock, TruncatedStream, VersionUnsupported
from lib.mesh.metrics import rmse_distortion
from lib.mesh.models import Mesh, SegmentationConfig, SegmentationMode, Sequence
from lib.motion.affine import CombinationMask
from lib.motion.keynodes import GeneratorConfig, init_nodes
from lib.motion.models import KeyNodeSet
from lib.motion.solver import SolverConfig
from lib.synthetic import ScenarioConfig, synthesize


def assert_same_frames(decoded: Sequence, expected):
    assert len(decoded) == len(expected)
    for a, b in zip(decoded.frames, expected):
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.faces, b.faces)
        np.testing.assert_array_equal(a.labels, b.labels)


@pytest.fixture
def walker_result(walker_seq, fast_codec_config):
    return encode_sequence(walker_seq, fast_codec_config)


class TestContainer:
    def test_header_round_trip(self):
        header = StreamHeader(
            frame_count=10,
            gof_size=4,
            seg_corr=False,
            seg_mode=SegmentationMode.MANUAL,
            per_frame=True,
            q=3,
            up_axis="z",
            key_pframe_index=2,
            affine_bits=0b10000001,
            qstep_t=snap_step(2e-3),
            qstep_p=1.0 / 512,
            qstep_nodes=snap_step(5e-4),
            frame_rate=25.0,
        )
        writer = ByteWriter()
        header.write(writer)
        assert StreamHeader.read(ByteReader(writer.getvalue())) == header

    def test_bad_magic(self, walker_result):
        with pytest.raises(BadMagic):
            decode_sequence(b"XXXX" + walker_result.data[4:])

    def test_version(self, walker_result):
        data = bytearray(walker_result.data)
        data[4] = 2
        with pytest.raises(VersionUnsupported):
            decode_sequence(bytes(data))

    def test_truncated(self, walker_result):
        with pytest.raises(TruncatedStream) as excinfo:
            decode_sequence(walker_result.data[:-10])
        assert excinfo.value.gof == 0

    def test_header_too_short(self, walker_result):
        with pytest.raises(TruncatedStream):
            decode_sequence(walker_result.data[: HEADER_SIZE - 2])


class TestBlocks:
    def test_nodes_round_trip(self, walker_seq):
        seg = SegmentationConfig()
        qstep = snap_step(1e-3)
        nodes = quantize_nodes(init_nodes(walker_seq.frames[0], 12, seed=0, seg=seg), qstep, seg)
        decoded, mask_code = decode_nodes(encode_nodes(nodes, qstep, mask_code=5), qstep, seg)
        assert mask_code == 5
        np.testing.assert_array_equal(decoded.positions, nodes.positions)
        np.testing.assert_array_equal(decoded.labels, nodes.labels)
        np.testing.assert_array_equal(decoded.affine_flags, nodes.affine_flags)

    def test_single_unlabelled_node(self):
        qstep = snap_step(1e-3)
        nodes = quantize_nodes(KeyNodeSet(positions=[[0.1, 0.2, 0.3]]), qstep, SegmentationConfig())
        decoded, _ = decode_nodes(encode_nodes(nodes, qstep), qstep, SegmentationConfig())
        np.testing.assert_array_equal(decoded.positions, nodes.positions)
        assert decoded.labels is None

    def test_iframe_round_trip(self, walker_seq):
        mesh = walker_seq.frames[0]
        decoded = decode_iframe(encode_iframe(mesh))
        expected = decoded_iframe(mesh)
        np.testing.assert_array_equal(decoded.vertices, expected.vertices)
        np.testing.assert_array_equal(decoded.faces, mesh.faces)
        np.testing.assert_array_equal(decoded.labels, mesh.labels)

    def test_unknown_iframe_codec(self, walker_seq):
        payload = bytearray(encode_iframe(walker_seq.frames[0]))
        payload[0] = 9
        with pytest.raises(CorruptBlock):
            decode_iframe(bytes(payload))


class TestSequenceCodec:
    @pytest.mark.slow
    @pytest.mark.parametrize("scenario", ["walker_seq", "swish_seq", "drift_seq"])
    def test_decoder_matches_encoder(self, request, scenario, fast_codec_config):
        seq = request.getfixturevalue(scenario)
        result = encode_sequence(seq, fast_codec_config)
        decoded = decode_sequence(result.data)
        assert decoded.frame_rate == seq.frame_rate
        assert_same_frames(decoded, result.reconstructed)

    def test_report(self, walker_result):
        report = walker_result.report
        assert report.total_bytes == len(walker_result.data)
        assert [f.kind for f in report.frames] == ["I", "P", "P", "P"]
        assert [f.mode for f in report.frames[1:]] == ["spatial", "spatiotemporal", "spatiotemporal"]
        # first-p strategy: one mask per GoF, chosen from 8 candidates
        assert len(set(report.gof_masks())) == 1
        assert len(report.rd_points) == 8
        assert sum(p.selected for p in report.rd_points) == 1

    def test_deterministic(self, walker_seq, fast_codec_config, walker_result):
        assert encode_sequence(walker_seq, fast_codec_config).data == walker_result.data

    def test_per_frame_strategy(self, walker_seq, fast_codec_config):
        cfg = fast_codec_config.model_copy(update={"rd": RDConfig(strategy=RDStrategy.PER_FRAME)})
        result = encode_sequence(walker_seq, cfg)
        assert len(result.report.rd_points) == 8 * 3
        assert_same_frames(decode_sequence(result.data), result.reconstructed)

    def test_forced_mask(self, walker_seq, fast_codec_config):
        cfg = fast_codec_config.model_copy(update={"forced_mask": CodecConfig(forced_mask="RT").forced_mask})
        result = encode_sequence(walker_seq, cfg)
        assert result.report.gof_masks() == ["RT"] * 3
        assert result.report.rd_points == []
        assert_same_frames(decode_sequence(result.data), result.reconstructed)

    def test_prediction_saves_translation_bytes(self, drift_seq, fast_codec_config):
        direct_cfg = fast_codec_config.model_copy(
            update={"toggles": ToggleConfig(translation_predcode=False), "forced_mask": CodecConfig(forced_mask="RT").forced_mask}
        )
        predicted_cfg = direct_cfg.model_copy(update={"toggles": ToggleConfig()})
        direct = encode_sequence(drift_seq, direct_cfg)
        predicted = encode_sequence(drift_seq, predicted_cfg)
        assert {f.mode for f in direct.report.frames[1:]} == {"direct"}

        def translation_bytes(result):
            return sum(f.translation_bytes for f in result.report.frames)

        assert translation_bytes(predicted) < translation_bytes(direct)
        assert_same_frames(decode_sequence(direct.data), direct.reconstructed)

    def test_multiple_gofs(self, walker_seq, fast_codec_config):
        cfg = fast_codec_config.model_copy(update={"gof_size": 3, "key_pframe_index": 1})
        result = encode_sequence(walker_seq, cfg)
        # 4 frames: one full GoF and a GoF holding a lone I-frame
        assert [f.kind for f in result.report.frames] == ["I", "P", "P", "I"]
        assert_same_frames(decode_sequence(result.data), result.reconstructed)

    def test_unlabelled_needs_segmentation_off(self, grid_mesh, fast_codec_config):
        bare = Mesh(vertices=grid_mesh.vertices, faces=grid_mesh.faces)
        seq = Sequence(frames=[bare, bare.with_vertices(bare.vertices + [0.0, 0.01, 0.0])])
        with pytest.raises(ConfigError):
            encode_sequence(seq, fast_codec_config)

        cfg = fast_codec_config.model_copy(
            update={
                "segmentation": SegmentationConfig(mode=SegmentationMode.OFF),
                "toggles": ToggleConfig(translation_predcode=False),
            }
        )
        result = encode_sequence(seq, cfg)
        decoded = decode_sequence(result.data)
        np.testing.assert_array_equal(decoded.frames[1].vertices, result.reconstructed[1].vertices)
        assert decoded.frames[1].labels is None

    @pytest.mark.parametrize("strategy", list(RDStrategy))
    def test_selected_rate_falls_as_lambda_grows(self, walker_seq, fast_codec_config, strategy):
        rates = []
        for lam in (1e-6, 1e-4, 1e-2):
            cfg = fast_codec_config.model_copy(update={"rd": RDConfig(lambda_=lam, strategy=strategy)})
            report = encode_sequence(walker_seq, cfg).report
            # later frames depend on earlier choices, so compare the first selection
            first = [p for p in report.rd_points if p.frame == 1]
            assert len(first) == 8
            rates.append(next(p.rate_bytes for p in first if p.selected))
        assert rates == sorted(rates, reverse=True)

    def test_seg_corr_is_inert_without_offsets(self, walker_seq, fast_codec_config, mocker):
        mocker.patch(
            "lib.motion.solver.seg_guided_prealign",
            side_effect=lambda source, target: {part: np.zeros(3) for part in source.parts()},
        )
        on = encode_sequence(walker_seq, fast_codec_config)
        off = encode_sequence(
            walker_seq, fast_codec_config.model_copy(update={"toggles": ToggleConfig(seg_corr=False)})
        )
        # only the header flag differs
        assert on.data[:HEADER_SIZE] != off.data[:HEADER_SIZE]
        assert on.data[HEADER_SIZE:] == off.data[HEADER_SIZE:]
        assert_same_frames(decode_sequence(off.data), on.reconstructed)


def mean_rmse(seq: Sequence, result) -> float:
    kinds = [f.kind for f in result.report.frames]
    errors = [
        rmse_distortion(decoded, truth)
        for decoded, truth, kind in zip(result.reconstructed, seq.frames, kinds)
        if kind == "P"
    ]
    return float(np.mean(errors))


@pytest.mark.slow
class TestBimodalAdvantage:
    """Torso scaling is cheaper to follow with affine nodes than with more rigid ones."""

    @pytest.fixture(scope="class")
    def swish16(self):
        return synthesize(ScenarioConfig(scenario="swish", frames=16, resolution=4, seed=3, amplitude=0.2))

    @staticmethod
    def encode(seq, node_count, forced_mask=None):
        cfg = CodecConfig(
            gof_size=8,
            forced_mask=forced_mask,
            rd=RDConfig(lambda_=0.0),
            generator=GeneratorConfig(target_count=node_count, max_rounds=4),
            solver=SolverConfig(max_outer_iters=3, max_inner_iters=30),
        )
        return encode_sequence(seq, cfg)

    @pytest.fixture(scope="class")
    def selected(self, swish16):
        return self.encode(swish16, 24)

    @pytest.fixture(scope="class")
    def rigid(self, swish16):
        return self.encode(swish16, 24, forced_mask="RT")

    def test_selection_enables_scale_or_shear(self, selected):
        masks = [CombinationMask.from_name(name) for name in selected.report.gof_masks()]
        assert masks
        assert all(m.s_on or m.h_on for m in masks)

    def test_lower_distortion_at_equal_node_count(self, swish16, selected, rigid):
        assert selected.report.node_counts == rigid.report.node_counts
        assert mean_rmse(swish16, selected) <= 0.8 * mean_rmse(swish16, rigid)

    def test_rigid_needs_half_again_as_many_nodes(self, swish16, selected):
        # 35 < 1.5 * 24 rigid nodes still fall short
        more_rigid = self.encode(swish16, 35, forced_mask="RT")
        assert mean_rmse(swish16, more_rigid) > mean_rmse(swish16, selected)


class TestCodecConfig:
    def test_defaults(self):
        cfg = CodecConfig()
        assert cfg.gof_size == 8
        assert cfg.rd.lambda_ == 1e-4
        assert cfg.forced_mask is None

    def test_qsteps_snapped(self):
        assert CodecConfig(qstep_t=1e-3).qstep_t == snap_step(1e-3)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"gof_size": 1},
            {"gof_size": 4, "key_pframe_index": 4},
            {"forced_mask": "RSH"},
            {"qstep_t": 0.0},
            {"rd": {"lambda": -1.0}},
            # u8 header fields
            {"gof_size": 300, "key_pframe_index": 256},
            {"solver": {"q": 256}},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            CodecConfig(**kwargs)

    def test_load_config(self, tmp_path):
        path = tmp_path / "codec.yml"
        path.write_text(
            "codec:\n"
            "  gof_size: 4\n"
            "  forced_mask: RT\n"
            "  rd:\n"
            "    lambda: 0.01\n"
            "    strategy: per-frame\n"
            "  segmentation:\n"
            "    affine_parts: Torso,Head\n"
        )
        cfg = CodecConfig.load_config(path)
        assert cfg.gof_size == 4
        assert cfg.forced_mask.name == "RT"
        assert cfg.rd.lambda_ == 0.01
        assert cfg.rd.strategy == RDStrategy.PER_FRAME
        assert len(cfg.segmentation.affine_parts) == 2

    @pytest.mark.parametrize("text", ["gof_size: [1, 2", "- 1\n- 2\n", "gof_size: 1\n"])
    def test_load_config_errors(self, tmp_path, text):
        path = tmp_path / "codec.yml"
        path.write_text(text)
        with pytest.raises(ConfigError):
            CodecConfig.load_config(path)

    def test_missing_config(self, tmp_path):
        with pytest.raises(ConfigError):
            CodecConfig.load_config(tmp_path / "missing.yml")
