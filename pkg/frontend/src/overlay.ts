/** Slab window geometry: voxel-to-pixel transforms for drawing overlays.
 *
 * A slab image is a maximum-intensity projection of a size^3 voxel cube.
 * Rows follow the first in-plane axis and columns the second, so a voxel
 * position maps to image pixels by subtracting the window origin. The
 * inverse adds it back, which makes the round trip exact.
 */

import type { SlabDto, Vec3 } from "./api.js";

export type Axis = 0 | 1 | 2;

export interface SlabView {
  axis: Axis;
  axes: [Axis, Axis];
  origin: [number, number];
  depthOrigin: number;
  size: number;
}

export interface PixelPoint {
  row: number;
  col: number;
  depth: number;
}

export function planeAxes(axis: Axis): [Axis, Axis] {
  const rest = ([0, 1, 2] as Axis[]).filter((k) => k !== axis);
  return [rest[0], rest[1]];
}

/** Round half to even, matching how the service places slab windows. */
export function roundHalfEven(x: number): number {
  const floor = Math.floor(x);
  const frac = x - floor;
  if (frac < 0.5) return floor;
  if (frac > 0.5) return floor + 1;
  return floor % 2 === 0 ? floor : floor + 1;
}

export function windowOrigin(center: number, size: number): number {
  return roundHalfEven(center) - Math.floor(size / 2);
}

export function slabView(slab: SlabDto): SlabView {
  return {
    axis: slab.axis as Axis,
    axes: [slab.axes[0] as Axis, slab.axes[1] as Axis],
    origin: [slab.origin[0], slab.origin[1]],
    depthOrigin: slab.depth_origin,
    size: slab.size,
  };
}

/** The view the service will answer with for a given window request. */
export function expectedView(center: Vec3, size: number, axis: Axis): SlabView {
  const axes = planeAxes(axis);
  return {
    axis,
    axes,
    origin: [
      windowOrigin(center[axes[0]], size),
      windowOrigin(center[axes[1]], size),
    ],
    depthOrigin: windowOrigin(center[axis], size),
    size,
  };
}

export function voxelToPixel(view: SlabView, v: Vec3): PixelPoint {
  return {
    row: v[view.axes[0]] - view.origin[0],
    col: v[view.axes[1]] - view.origin[1],
    depth: v[view.axis] - view.depthOrigin,
  };
}

export function pixelToVoxel(view: SlabView, p: PixelPoint): Vec3 {
  const v: Vec3 = [0, 0, 0];
  v[view.axes[0]] = p.row + view.origin[0];
  v[view.axes[1]] = p.col + view.origin[1];
  v[view.axis] = p.depth + view.depthOrigin;
  return v;
}

export function inWindow(view: SlabView, p: PixelPoint): boolean {
  return (
    p.row >= 0 &&
    p.row < view.size &&
    p.col >= 0 &&
    p.col < view.size &&
    p.depth >= 0 &&
    p.depth < view.size
  );
}

/** Graph positions are stored in voxels; trajectories are micrometers. */
export function umToVoxel(p: ArrayLike<number>, pitch: number): Vec3 {
  return [p[0] / pitch, p[1] / pitch, p[2] / pitch];
}

export function projectPolyline(view: SlabView, points: Vec3[]): PixelPoint[] {
  return points.map((v) => voxelToPixel(view, v));
}
