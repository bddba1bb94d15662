import numpy as np
import pytest

import armctl
from armctl.errors import (
    BranchingChain,
    LimitViolation,
    MalformedXml,
    MissingInertial,
    NotADescendant,
    UnknownLink,
    UnsupportedJointType,
)
from armctl.urdf import extract_chain, parse_urdf, serialize_urdf

FIXTURE_MASSES = {"planar2": 2.0, "planar3": 2.4, "generic7": 12.7}


MINIMAL = """
<robot name="mini">
  <link name="base"/>
  <link name="arm">
    <inertial>
      <origin xyz="0.1 0 0"/>
      <mass value="1.5"/>
      <inertia ixx="0.001" ixy="0" ixz="0" iyy="0.01" iyz="0" izz="0.01"/>
    </inertial>
  </link>
  <joint name="j1" type="revolute">
    <origin xyz="0 0 0.1" rpy="0 0 0"/>
    <parent link="base"/>
    <child link="arm"/>
    <axis xyz="0 0 1"/>
    <limit lower="-1.0" upper="1.0" effort="10" velocity="2"/>
  </joint>
</robot>
"""


class TestParse:
    def test_planar3_dof(self):
        model = armctl.load_fixture("planar3")
        assert model.dof == 3
        assert model.base_link == "base"
        assert model.tip_link == "tool"

    def test_generic7_dof_and_effort_limits(self):
        model = armctl.load_fixture("generic7")
        assert model.dof == 7
        assert model.effort_limits.shape == (7,)
        assert np.all(np.isfinite(model.effort_limits))
        assert np.all(model.effort_limits > 0)

    def test_fixed_joints_contribute_frames_not_dofs(self):
        model = armctl.load_fixture("planar2")
        assert model.dof == 2
        assert len(model.joints) == 3  # two revolute + one fixed tool mount

    def test_minimal(self):
        model = parse_urdf(MINIMAL)
        assert model.dof == 1
        assert model.joints[0].origin.position[2] == pytest.approx(0.1)

    def test_branching_rejected(self):
        text = MINIMAL.replace(
            "</robot>",
            """
            <link name="extra"><inertial><mass value="1"/>
              <inertia ixx="0.01" ixy="0" ixz="0" iyy="0.01" iyz="0" izz="0.01"/>
            </inertial></link>
            <joint name="j2" type="revolute">
              <parent link="base"/><child link="extra"/><axis xyz="0 0 1"/>
              <limit lower="-1" upper="1" effort="5" velocity="1"/>
            </joint>
            </robot>""")
        with pytest.raises(BranchingChain):
            parse_urdf(text)

    def test_malformed_xml(self):
        with pytest.raises(MalformedXml):
            parse_urdf("<robot><link name='a'>")
        with pytest.raises(MalformedXml):
            parse_urdf("<notrobot/>")

    def test_missing_inertial_on_dynamic_link(self):
        text = MINIMAL.replace(
            '<inertial>\n      <origin xyz="0.1 0 0"/>\n      <mass value="1.5"/>\n'
            '      <inertia ixx="0.001" ixy="0" ixz="0" iyy="0.01" iyz="0" izz="0.01"/>\n'
            '    </inertial>', "")
        with pytest.raises(MissingInertial):
            parse_urdf(text)

    def test_fixed_attached_link_may_omit_inertial(self):
        text = MINIMAL.replace("</robot>", """
            <link name="flange"/>
            <joint name="mount" type="fixed">
              <origin xyz="0.2 0 0"/>
              <parent link="arm"/><child link="flange"/>
            </joint>
            </robot>""")
        model = parse_urdf(text)
        assert model.tip_link == "flange"
        assert model.dof == 1

    def test_unsupported_joint_types(self):
        for kind in ("continuous", "planar", "floating"):
            with pytest.raises(UnsupportedJointType):
                parse_urdf(MINIMAL.replace('type="revolute"', f'type="{kind}"'))

    def test_limit_violations(self):
        with pytest.raises(LimitViolation):
            parse_urdf(MINIMAL.replace('lower="-1.0" upper="1.0"',
                                       'lower="1.0" upper="-1.0"'))
        with pytest.raises(LimitViolation):
            parse_urdf(MINIMAL.replace(' effort="10"', ''))
        with pytest.raises(LimitViolation):
            parse_urdf(MINIMAL.replace('velocity="2"', 'velocity="0"'))

    def test_axis_normalized_on_parse(self):
        model = parse_urdf(MINIMAL.replace('xyz="0 0 1"', 'xyz="0 0 2"'))
        assert np.linalg.norm(model.joints[0].axis) == pytest.approx(1.0, abs=1e-12)

    def test_inertia_triangle_inequality_enforced(self):
        bad = MINIMAL.replace('ixx="0.001"', 'ixx="0.1"').replace(
            'iyy="0.01"', 'iyy="0.01"').replace('izz="0.01"', 'izz="0.001"')
        # moments (0.1, 0.01, 0.001): 0.01 + 0.001 < 0.1
        with pytest.raises(MissingInertial):
            parse_urdf(bad)

    def test_inertial_origin_rotation_rotates_tensor(self):
        # a 90 degree yaw swaps the x and y principal axes
        text = MINIMAL.replace('<origin xyz="0.1 0 0"/>',
                               '<origin xyz="0.1 0 0" rpy="0 0 1.5707963267948966"/>')
        model = parse_urdf(text)
        spec = dict(model.links)["arm"]
        assert spec.inertia[0, 0] == pytest.approx(0.01, abs=1e-12)
        assert spec.inertia[1, 1] == pytest.approx(0.001, abs=1e-12)


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(FIXTURE_MASSES))
    def test_parse_serialize_parse_identical(self, name):
        first = armctl.load_fixture(name)
        second = parse_urdf(serialize_urdf(first))
        assert first == second

    @pytest.mark.parametrize("name", sorted(FIXTURE_MASSES))
    def test_documented_total_mass(self, name):
        model = armctl.load_fixture(name)
        assert abs(model.total_mass() - FIXTURE_MASSES[name]) < 1e-12


class TestExtractChain:
    def test_full_chain_identity(self):
        model = armctl.load_fixture("generic7")
        sub = extract_chain(model, "link0", "link7")
        assert sub.dof == 7
        assert sub == model

    def test_subchain(self):
        model = armctl.load_fixture("generic7")
        sub = extract_chain(model, "link2", "link5")
        assert sub.dof == 3
        assert sub.base_link == "link2"
        assert sub.tip_link == "link5"

    def test_reversed_order(self):
        model = armctl.load_fixture("generic7")
        with pytest.raises(NotADescendant):
            extract_chain(model, "link5", "link2")

    def test_unknown_link(self):
        model = armctl.load_fixture("generic7")
        with pytest.raises(UnknownLink):
            extract_chain(model, "link0", "wrist")
