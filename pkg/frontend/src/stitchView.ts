/**
 * View-model for the stitch panel: everything derives from the project
 * document, so a page reload reproduces the list exactly.
 */

import type { PlacementDoc, ProjectDoc } from "./api.js";

export interface StitchTileRow {
  tileId: string;
  patch: string;
  accepted: boolean;
}

export function stitchTileList(doc: ProjectDoc): StitchTileRow[] {
  const placed = new Map<string, PlacementDoc>(
    doc.placements.map((p) => [p.tile_id, p]),
  );
  return doc.hypercubes.map((h) => {
    const p = placed.get(h.id);
    return {
      tileId: h.id,
      patch: p
        ? `(${p.patch.x}, ${p.patch.y}) ${p.patch.w}×${p.patch.h}`
        : "—",
      accepted: p !== undefined,
    };
  });
}

export function acceptedCount(doc: ProjectDoc): number {
  return doc.placements.length;
}
