"""Parametric demo robots used by the tests, the CLI defaults and the benchmarks.

The desk robot faces +x with z up: a pedestal, a yaw + pitch torso, and two
arms mounted left (arm1, +y) and right (arm2, -y) of the torso tip.
"""
from __future__ import annotations

import math

import numpy as np

from .kinematics import (BaseSphere, CollisionSphere, Joint, RobotModel, make_transform)

PI = math.pi

X = (1.0, 0.0, 0.0)
Y = (0.0, 1.0, 0.0)
Z = (0.0, 0.0, 1.0)


def _j(axis, xyz=(0, 0, 0), limits=(-PI, PI), name=""):
    return Joint("revolute", np.array(axis, float), make_transform(xyz), limits, name)


def _arm(prefix, n_joints, limits):
    """Shoulder pitch, optional shoulder yaw, elbow pitch.  Links extend along +x."""
    if n_joints == 1:
        joints = [_j(Y, limits=limits[0], name=f"{prefix}_pitch")]
        spheres = [CollisionSphere(0, (0.12, 0, 0), 0.045), CollisionSphere(0, (0.24, 0, 0), 0.045)]
        return joints, spheres
    joints = [_j(Y, limits=limits[0], name=f"{prefix}_shoulder_pitch")]
    spheres = [CollisionSphere(0, (0.0, 0, 0), 0.05)]
    if n_joints >= 3:
        joints.append(_j(Z, limits=limits[1], name=f"{prefix}_shoulder_yaw"))
    upper = len(joints) - 1
    spheres += [CollisionSphere(upper, (0.11, 0, 0), 0.045), CollisionSphere(upper, (0.21, 0, 0), 0.045)]
    joints.append(_j(Y, xyz=(0.25, 0, 0), limits=limits[-1], name=f"{prefix}_elbow"))
    spheres += [CollisionSphere(len(joints) - 1, (0.10, 0, 0), 0.04),
                CollisionSphere(len(joints) - 1, (0.20, 0, 0), 0.04)]
    return joints, spheres


def desk_robot(arm_joints: int = 3, torso_joints: int = 2, arm_limits=None,
               torso_limits=None, shoulder_offset: float = 0.22) -> RobotModel:
    """Desk-scale dual-arm robot.

    ``torso_joints`` is 1 (yaw) or 2 (yaw, pitch); ``arm_joints`` 1-3.
    ``arm_limits`` applies to the left arm; the right arm mirrors its yaw range.
    Default shoulder-yaw limits stop short of swinging an arm across the
    torso, which would split each chain's free space in two.
    """
    if torso_limits is None:
        torso_limits = [(-2 * PI / 3, 2 * PI / 3), (-PI / 3, PI / 2)][:torso_joints]
    if arm_limits is None:
        arm_limits = [(-PI, 5 * PI / 6)] * arm_joints
        if arm_joints >= 3:
            arm_limits[1] = (-PI / 6, 5 * PI / 6)
    right_limits = list(arm_limits)
    if arm_joints >= 3:
        lo, hi = arm_limits[1]
        right_limits[1] = (-hi, -lo)
    torso = [_j(Z, xyz=(0, 0, 0.30), limits=torso_limits[0], name="torso_yaw")]
    torso_spheres = [CollisionSphere(0, (0, 0, 0.08), 0.08)]
    if torso_joints >= 2:
        torso.append(_j(Y, xyz=(0, 0, 0.16), limits=torso_limits[1], name="torso_pitch"))
    tip = len(torso) - 1
    torso_spheres += [CollisionSphere(tip, (0, 0, 0.12 if torso_joints >= 2 else 0.28), 0.09),
                      CollisionSphere(tip, (0, 0, 0.26 if torso_joints >= 2 else 0.42), 0.09)]
    mount_z = 0.28 if torso_joints >= 2 else 0.44
    a1, s1 = _arm("left", arm_joints, arm_limits)
    a2, s2 = _arm("right", arm_joints, right_limits)
    return RobotModel(
        torso=tuple(torso), arm1=tuple(a1), arm2=tuple(a2),
        mount1=make_transform((0, shoulder_offset, mount_z)),
        mount2=make_transform((0, -shoulder_offset, mount_z)),
        torso_spheres=tuple(torso_spheres), arm1_spheres=tuple(s1), arm2_spheres=tuple(s2),
        base_spheres=(BaseSphere((0, 0, 0.15), 0.15),),
        name=f"desk_t{torso_joints}_a{arm_joints}",
    )


def planar_demo_robot() -> RobotModel:
    """Smallest robot: one torso yaw joint and a one-joint arm on each side.

    Each chain has two degrees of freedom.  This is the worked example in
    ``docs/format.md`` and ``assets/demo_robot.json``.
    """
    torso = (_j(Z, xyz=(0, 0, 0.5), limits=(-PI / 6, PI / 6), name="torso_yaw"),)
    arm1 = (_j(Z, limits=(0.0, PI / 2), name="left_yaw"),)
    arm2 = (_j(Z, limits=(-PI / 2, 0.0), name="right_yaw"),)
    return RobotModel(
        torso=torso, arm1=arm1, arm2=arm2,
        mount1=make_transform((0, 0.2, 0)), mount2=make_transform((0, -0.2, 0)),
        torso_spheres=(CollisionSphere(0, (0, 0, 0), 0.1),),
        arm1_spheres=(CollisionSphere(0, (0.2, 0, 0), 0.05), CollisionSphere(0, (0.35, 0, 0), 0.05)),
        arm2_spheres=(CollisionSphere(0, (0.2, 0, 0), 0.05), CollisionSphere(0, (0.35, 0, 0), 0.05)),
        name="planar_demo",
    )


def desk_defaults():
    """Discretization used for the desk-scale benchmark robot (``desk_robot()``)."""
    return {"torso_step": PI / 6, "arm_step": PI / 6, "voxel_size": 0.06,
            "workspace": ((-0.9, -0.9, 0.0), (0.9, 0.9, 1.5))}
