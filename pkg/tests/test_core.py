import numpy as np
import pytest

from monostixels.core import (CLASS_NAMES, CameraRig, ColumnObservation, EnergyParams,
                              FrameMotion, NUM_CLASSES, SemanticClass, Stixel, StixelColumn,
                              StixelType, class_to_type, classes_of_type, validate_column)


def test_class_to_type_examples():
    assert class_to_type(SemanticClass.ROAD) == StixelType.GROUND
    assert class_to_type(SemanticClass.VEHICLE) == StixelType.DYNAMIC_OBJECT
    assert class_to_type(SemanticClass.SKY) == StixelType.SKY


def test_class_to_type_is_total_and_onto():
    image = {class_to_type(c) for c in SemanticClass}
    assert image == set(StixelType)
    assert len(CLASS_NAMES) == NUM_CLASSES == 10


def test_classes_of_type_listing_order():
    assert classes_of_type(StixelType.DYNAMIC_OBJECT) == [
        SemanticClass.VEHICLE, SemanticClass.TWO_WHEELER, SemanticClass.PERSON]


def _sky(c, vb, vt):
    return Stixel(c, vb, vt, StixelType.SKY, SemanticClass.SKY, 0.0)


def test_validate_full_sky_column():
    assert validate_column(StixelColumn(0, (_sky(0, 9, 0),)), 10)


def test_validate_rejects_gap():
    col = StixelColumn(0, (_sky(0, 9, 6), _sky(0, 4, 0)))
    assert not validate_column(col, 10)


def test_validate_rejects_negative_inverse_depth():
    obj = Stixel(0, 9, 5, StixelType.STATIC_OBJECT, SemanticClass.BUILDING, -0.1)
    assert not validate_column(StixelColumn(0, (obj, _sky(0, 4, 0))), 10)


def test_validate_rejects_type_class_mismatch_and_sky_depth():
    bad = Stixel(0, 9, 0, StixelType.GROUND, SemanticClass.SKY, 0.5)
    assert not validate_column(StixelColumn(0, (bad,)), 10)
    assert not validate_column(
        StixelColumn(0, (Stixel(0, 9, 0, StixelType.SKY, SemanticClass.SKY, 0.1),)), 10)


def test_validate_accepts_ground_object_sky():
    st = (Stixel(0, 9, 6, StixelType.GROUND, SemanticClass.ROAD, 1 / 1.65),
          Stixel(0, 5, 3, StixelType.DYNAMIC_OBJECT, SemanticClass.PERSON, 0.1, (0.01, -0.02)),
          _sky(0, 2, 0))
    assert validate_column(StixelColumn(0, st), 10)
    # non-dynamic stixels must not carry a translation
    st2 = (Stixel(0, 9, 0, StixelType.STATIC_OBJECT, SemanticClass.BUILDING, 0.1, (0.1, 0.0)),)
    assert not validate_column(StixelColumn(0, st2), 10)


def test_energy_params_defaults_and_validation():
    p = EnergyParams()
    assert (p.beta_mc, p.alpha_L, p.alpha_F, p.mlesac_max_samples) == (4.0, 8.0, 16.0, 20)
    assert p.beta_grav_neg == -2.0
    with pytest.raises(ValueError):
        EnergyParams(alpha_F=-1.0)
    with pytest.raises(ValueError):
        EnergyParams(delta_L=0.0, delta_F=0.0)
    with pytest.raises(ValueError):
        EnergyParams(min_inv_depth=1.0, max_inv_depth=0.5)


def test_energy_params_dict_round_trip():
    p = EnergyParams(beta_mc=7.5, mlesac_max_samples=5)
    assert EnergyParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError, match="unknown"):
        EnergyParams.from_dict({"bogus": 1})


def test_camera_rig_validation_and_columns():
    rig = CameraRig.simple(400.0, 10.0, 5.0, 20, 10, stixel_width=5)
    assert rig.n_columns == 4
    assert rig.u_center(1) == 7.0
    assert np.allclose(rig.down, [0, 1, 0])
    with pytest.raises(ValueError):
        CameraRig(np.eye(3), np.diag([1.0, 1.0, -1.0]), 1.65, 10, 10)
    with pytest.raises(ValueError):
        CameraRig(np.eye(3), np.eye(3), 1.65, 10, 10, stixel_width=0)
    back = CameraRig.from_dict(rig.to_dict())
    assert np.array_equal(back.K, rig.K) and back.stixel_width == 5


def test_frame_motion_rejects_non_rotation():
    with pytest.raises(ValueError):
        FrameMotion(2 * np.eye(3), np.zeros(3))
    m = FrameMotion.forward(1.0, 0.1)
    back = FrameMotion.from_dict(m.to_dict())
    assert np.array_equal(back.R_cam, m.R_cam) and np.array_equal(back.t_cam, m.t_cam)


def test_column_observation_validation():
    s = np.full((3, NUM_CLASSES), 0.1)
    ColumnObservation(np.zeros((3, 2)), np.ones(3), s, 0.0)
    with pytest.raises(ValueError):
        ColumnObservation(np.zeros((3, 2)), np.zeros(3), s, 0.0)
    with pytest.raises(ValueError):
        ColumnObservation(np.zeros((3, 2)), np.ones(3), s * 2, 0.0)
    with pytest.raises(ValueError):
        ColumnObservation(np.zeros((2, 2)), np.ones(3), s, 0.0)


def test_immutability():
    obs = ColumnObservation(np.zeros((3, 2)), np.ones(3), np.full((3, NUM_CLASSES), 0.1), 0.0)
    with pytest.raises(ValueError):
        obs.flow[0, 0] = 1.0
