import numpy as np
import pytest
from hypothesis import given, strategies as st

from densityfusion.core import (
    ACRDensity,
    BScore,
    BreastMask,
    CaseRecord,
    ConfusionCounts,
    DensityClass,
    GroundTruth,
    RiskBand,
    ThermalFrame,
    age_band,
    classify_density,
)
from densityfusion.errors import (
    BadEnumError,
    NonFiniteTemperatureError,
    OutOfPhysioRangeError,
    RangeError,
)


class TestDensity:
    def test_fatty_grades(self):
        assert classify_density(ACRDensity.B) is DensityClass.FATTY
        assert classify_density(ACRDensity.A) is DensityClass.FATTY

    def test_dense_grades(self):
        assert classify_density(ACRDensity.C) is DensityClass.DENSE
        assert classify_density(ACRDensity.D) is DensityClass.DENSE

    def test_partition_into_two_pairs(self):
        classes = {d: classify_density(d) for d in ACRDensity}
        fatty = [d for d, c in classes.items() if c is DensityClass.FATTY]
        dense = [d for d, c in classes.items() if c is DensityClass.DENSE]
        assert len(fatty) == 2 and len(dense) == 2

    def test_parse_rejects_unknown(self):
        with pytest.raises(BadEnumError):
            ACRDensity.parse("E")
        assert ACRDensity.parse(" c ") is ACRDensity.C


class TestBScore:
    @pytest.mark.parametrize("grade,band", [(1, RiskBand.LOW), (2, RiskBand.LOW), (3, RiskBand.MODERATE),
                                            (4, RiskBand.HIGH), (5, RiskBand.HIGH)])
    def test_band(self, grade, band):
        assert BScore(grade).band is band

    @pytest.mark.parametrize("grade", [0, 6, -1])
    def test_out_of_range(self, grade):
        with pytest.raises(RangeError):
            BScore(grade)


class TestCaseRecord:
    def _case(self, **kw):
        base = dict(case_id="c1", age=52, menopause=True, density=ACRDensity.C,
                    ground_truth=GroundTruth.SUSPICIOUS)
        base.update(kw)
        return CaseRecord(**base)

    def test_density_class(self):
        assert self._case().density_class is DensityClass.DENSE

    def test_minor_rejected(self):
        with pytest.raises(RangeError):
            self._case(age=17)

    @pytest.mark.parametrize("p", [-0.01, 1.01, float("nan")])
    def test_prob_range(self, p):
        with pytest.raises(RangeError):
            self._case(mammo_prob=p)

    def test_frozen(self):
        c = self._case()
        with pytest.raises(AttributeError):
            c.age = 60


class TestThermalFrame:
    def test_read_only_copy(self):
        src = np.full((3, 4), 30.0)
        f = ThermalFrame(src)
        src[0, 0] = 40.0
        assert f.temps[0, 0] == 30.0
        with pytest.raises(ValueError):
            f.temps[0, 0] = 31.0

    def test_non_finite(self):
        t = np.full((2, 2), 30.0)
        t[1, 1] = np.nan
        with pytest.raises(NonFiniteTemperatureError):
            ThermalFrame(t)

    @pytest.mark.parametrize("value", [14.99, 45.01])
    def test_physio_range(self, value):
        with pytest.raises(OutOfPhysioRangeError):
            ThermalFrame(np.full((2, 2), value))

    def test_mirror(self):
        t = np.arange(6, dtype=float).reshape(2, 3) + 20
        np.testing.assert_array_equal(ThermalFrame(t).mirrored().temps, t[:, ::-1])


class TestBreastMask:
    def test_overlap_rejected(self):
        a = np.zeros((3, 3), bool)
        a[1, 1] = True
        with pytest.raises(RangeError):
            BreastMask(a, a)


class TestConfusionCounts:
    @given(st.tuples(*[st.integers(0, 500)] * 4), st.tuples(*[st.integers(0, 500)] * 4))
    def test_addition_is_cellwise(self, a, b):
        s = ConfusionCounts(*a) + ConfusionCounts(*b)
        assert s.as_tuple() == tuple(x + y for x, y in zip(a, b))
        assert s.n_pos == a[0] + a[3] + b[0] + b[3]

    def test_negative_rejected(self):
        with pytest.raises(RangeError):
            ConfusionCounts(-1, 0, 0, 0)


@pytest.mark.parametrize("age,band", [(18, "<30"), (29, "<30"), (30, "30-39"), (49, "40-49"),
                                      (50, "50-59"), (69, "60-69"), (70, ">=70"), (95, ">=70")])
def test_age_band_cut_points(age, band):
    assert age_band(age) == band
