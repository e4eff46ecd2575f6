import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from densityfusion.core import ACRDensity, DensityClass, GroundTruth, Side, ThermalFrame
from densityfusion.errors import (
    BadEnumError,
    BadMagicError,
    DimensionMismatchError,
    DuplicateIdError,
    MissingColumnError,
    NonFiniteTemperatureError,
    OutOfPhysioRangeError,
    RangeError,
    SpecOverflowError,
)
from densityfusion.segment import SegmentationParams, detect_hotspots, segment_breast
from densityfusion.thermal_io import (
    MANIFEST_COLUMNS,
    PhantomSpec,
    PhantomTruth,
    base_field,
    format_manifest,
    generate_phantom,
    load_manifest,
    load_thermal_frame,
    parse_manifest,
    read_pgm,
    resolve_thermal_refs,
    write_pgm,
    write_thermal_frame,
)

HEADER = ",".join(MANIFEST_COLUMNS)


class TestManifest:
    def test_row_mapping(self):
        cases = parse_manifest(HEADER + "\nc1,52,true,C,0.61,imgs/c1,SUSPICIOUS\n")
        (c,) = cases
        assert c.case_id == "c1" and c.age == 52 and c.menopause
        assert c.density is ACRDensity.C and c.density_class is DensityClass.DENSE
        assert c.mammo_prob == 0.61 and c.thermal_ref == "imgs/c1"
        assert c.ground_truth is GroundTruth.SUSPICIOUS

    def test_optional_fields_empty(self):
        (c,) = parse_manifest(HEADER + "\nc1,40,no,A,,,NOT_SUSPICIOUS\n")
        assert c.mammo_prob is None and c.thermal_ref is None

    def test_bad_density(self):
        with pytest.raises(BadEnumError):
            parse_manifest(HEADER + "\nc1,52,true,E,0.61,,SUSPICIOUS\n")

    def test_bad_truth(self):
        with pytest.raises(BadEnumError):
            parse_manifest(HEADER + "\nc1,52,true,C,0.61,,MAYBE\n")

    def test_prob_out_of_range(self):
        with pytest.raises(RangeError):
            parse_manifest(HEADER + "\nc1,52,true,C,1.5,,SUSPICIOUS\n")

    def test_missing_column(self):
        with pytest.raises(MissingColumnError):
            parse_manifest("case_id,age\nc1,52\n")

    def test_duplicate_id(self):
        row = "c1,52,true,C,0.61,,SUSPICIOUS\n"
        with pytest.raises(DuplicateIdError):
            parse_manifest(HEADER + "\n" + row + row)

    def test_order_and_round_trip(self, tmp_path):
        text = HEADER + "\n" + "".join(
            f"c{i},{30 + i},{'true' if i % 2 else 'false'},{'ABCD'[i % 4]},{i / 10!r},,"
            f"{'SUSPICIOUS' if i % 3 == 0 else 'NOT_SUSPICIOUS'}\n" for i in range(8))
        cases = parse_manifest(text)
        assert [c.case_id for c in cases] == [f"c{i}" for i in range(8)]
        path = tmp_path / "m.csv"
        path.write_text(format_manifest(cases))
        assert load_manifest(path) == cases

    def test_cohort_totals(self):
        rows = [f"c{i},45,false,B,,,{'SUSPICIOUS' if i < 55 else 'NOT_SUSPICIOUS'}" for i in range(324)]
        cases = parse_manifest(HEADER + "\n" + "\n".join(rows) + "\n")
        assert len(cases) == 324
        assert sum(c.ground_truth.positive for c in cases) == 55

    def test_multiple_views(self, tmp_path):
        (c,) = parse_manifest(HEADER + "\nc1,52,true,C,,a.pgm; b.pgm,SUSPICIOUS\n")
        assert resolve_thermal_refs(c, tmp_path) == [tmp_path / "a.pgm", tmp_path / "b.pgm"]


class TestFrames:
    def test_constant_csv(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("\n".join(["32.0,32.0,32.0,32.0"] * 4) + "\n")
        f = load_thermal_frame(p)
        assert f.temps.shape == (4, 4)
        assert f.temps.min() == f.temps.max() == 32.0

    def test_pgm_calibration(self, tmp_path):
        p = tmp_path / "f.pgm"
        write_pgm(np.full((2, 3), 20000), p)
        p.with_suffix(".cal").write_text("scale=0.001 offset=15.0\n")
        f = load_thermal_frame(p)
        np.testing.assert_allclose(f.temps, 35.0, rtol=0, atol=1e-12)

    def test_nan_token(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("30.0,nan\n30.0,30.0\n")
        with pytest.raises(NonFiniteTemperatureError):
            load_thermal_frame(p)

    def test_ragged_csv(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("30.0,30.0\n30.0\n")
        with pytest.raises(DimensionMismatchError):
            load_thermal_frame(p)

    def test_out_of_range(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("30.0,50.0\n")
        with pytest.raises(OutOfPhysioRangeError):
            load_thermal_frame(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "f.pgm"
        p.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
        with pytest.raises(BadMagicError):
            read_pgm(p)

    def test_truncated_raster(self, tmp_path):
        p = tmp_path / "f.pgm"
        p.write_bytes(b"P5\n4 4\n65535\n" + b"\x00" * 10)
        with pytest.raises(DimensionMismatchError):
            read_pgm(p)

    def test_pgm_comment_and_8bit(self, tmp_path):
        p = tmp_path / "f.pgm"
        p.write_bytes(b"P5\n# made by hand\n3 1\n255\n" + bytes([1, 2, 250]))
        np.testing.assert_array_equal(read_pgm(p), [[1, 2, 250]])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_pgm_round_trip_within_half_scale(self, h, w, seed):
        import tempfile
        from pathlib import Path

        temps = np.random.default_rng(seed).uniform(15.0, 45.0, size=(h, w))
        frame = ThermalFrame(temps)
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "f.pgm"
            write_thermal_frame(frame, p, scale=0.001, offset=15.0)
            back = load_thermal_frame(p)
        assert np.max(np.abs(back.temps - temps)) <= 0.0005 + 1e-12

    def test_csv_round_trip_exact(self, tmp_path):
        temps = np.random.default_rng(3).uniform(20, 40, size=(5, 7))
        p = tmp_path / "f.csv"
        write_thermal_frame(ThermalFrame(temps), p)
        np.testing.assert_array_equal(load_thermal_frame(p).temps, temps)


class TestPhantom:
    def test_empty_spec_is_base_field(self):
        spec = PhantomSpec()
        frame, truth = generate_phantom(spec, 11)
        np.testing.assert_array_equal(frame.temps, base_field(spec))
        assert truth.hotspots == () and truth.vessels == ()

    def test_deterministic(self):
        spec = PhantomSpec(hotspots_left=2, vessels_right=2, noise=0.05, areola_delta_left=1.0)
        f1, t1 = generate_phantom(spec, 5)
        f2, t2 = generate_phantom(spec, 5)
        assert f1.temps.tobytes() == f2.temps.tobytes()
        assert t1 == t2

    def test_seed_changes_frame(self):
        spec = PhantomSpec(hotspots_left=1, noise=0.05)
        assert not np.array_equal(generate_phantom(spec, 1)[0].temps, generate_phantom(spec, 2)[0].temps)

    def test_truth_json_round_trip(self):
        _, truth = generate_phantom(PhantomSpec(hotspots_left=1, vessels_right=1, vessel_branching=True), 4)
        assert PhantomTruth.from_json(truth.to_json()) == truth

    @pytest.mark.parametrize("seed", range(5))
    def test_structures_inside_lobes(self, seed):
        spec = PhantomSpec(hotspots_left=2, hotspots_right=1, vessels_left=2, vessels_right=2)
        _, truth = generate_phantom(spec, seed)
        for h in truth.hotspots:
            cr, cc = truth.lobe_centers[Side(h.side)]
            assert np.hypot(h.center[0] - cr, h.center[1] - cc) + h.radius <= truth.lobe_radius
        for v in truth.vessels:
            cr, cc = truth.lobe_centers[Side(v.side)]
            for seg in v.segments:
                for p in seg:
                    assert np.hypot(p[0] - cr, p[1] - cc) < truth.lobe_radius

    @pytest.mark.parametrize("seed", range(5))
    def test_hotspot_centre_warmth(self, seed):
        spec = PhantomSpec(hotspots_left=2, hotspots_right=2, hotspot_delta=1.5)
        frame, truth = generate_phantom(spec, seed)
        base = base_field(spec)
        for h in truth.hotspots:
            r, c = (int(round(v)) for v in h.center)
            # the centre is at most half a pixel away from the rounded pixel
            assert frame.temps[r, c] >= base[r, c] + 0.5 * h.delta

    def test_overflow(self):
        spec = PhantomSpec(hotspots_left=30, max_retries=50)
        with pytest.raises(SpecOverflowError):
            generate_phantom(spec, 0)

    @pytest.mark.parametrize("kw", [dict(hotspot_delta=0.0), dict(hotspot_delta=5.5), dict(hotspots_left=-1),
                                    dict(vessel_caliber=0.5), dict(noise=-0.1)])
    def test_invalid_spec(self, kw):
        with pytest.raises(RangeError):
            generate_phantom(PhantomSpec(**kw), 0)

    def test_three_hotspots_recovered(self):
        spec = PhantomSpec(hotspots_left=2, hotspots_right=1, hotspot_delta=2.0, noise=0.05)
        frame, truth = generate_phantom(spec, 21)
        maps = detect_hotspots(frame, segment_breast(frame), SegmentationParams())
        found = [h.centroid for m in maps.values() for h in m.hotspots]
        assert len(found) >= 3
        for h in truth.hotspots:
            d = min(np.hypot(h.center[0] - r, h.center[1] - c) for r, c in found)
            assert d <= 3.0
