// Roll-pitch-yaw <-> quaternion (w, x, y, z), matching the server's URDF
// fixed-axis convention R = Rz(yaw) Ry(pitch) Rx(roll).

export type Euler = [number, number, number]; // roll, pitch, yaw (rad)
export type Quat = [number, number, number, number];

function qmul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function eulerToQuat([roll, pitch, yaw]: Euler): Quat {
  const qx: Quat = [Math.cos(roll / 2), Math.sin(roll / 2), 0, 0];
  const qy: Quat = [Math.cos(pitch / 2), 0, Math.sin(pitch / 2), 0];
  const qz: Quat = [Math.cos(yaw / 2), 0, 0, Math.sin(yaw / 2)];
  let q = qmul(qz, qmul(qy, qx));
  const norm = Math.hypot(...q);
  q = q.map((v) => v / norm) as Quat;
  return q[0] < 0 ? (q.map((v) => -v) as Quat) : q;
}

export function quatToEuler(q: Quat): Euler {
  const norm = Math.hypot(...q);
  const [w, x, y, z] = q.map((v) => v / norm);
  // ZYX extraction of R(q)
  const sinPitch = Math.max(-1, Math.min(1, 2 * (w * y - z * x)));
  const pitch = Math.asin(sinPitch);
  const roll = Math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y));
  const yaw = Math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z));
  return [roll, pitch, yaw];
}

// Wrap an angle into [-pi, pi] for slider display.
export function wrapAngle(a: number): number {
  let v = (a + Math.PI) % (2 * Math.PI);
  if (v < 0) v += 2 * Math.PI;
  return v - Math.PI;
}
