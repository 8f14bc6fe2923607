import { describe, expect, it } from "vitest";
import { ApiClient, ProjectDoc } from "../src/api.js";
import { acceptedCount, stitchTileList } from "../src/stitchView.js";

function doc(partial: Partial<ProjectDoc>): ProjectDoc {
  return {
    id: "p1",
    wsi: { id: "w1", path: "/wsi.png", width: 1024, height: 768 },
    hypercubes: [],
    placements: [],
    accepted_registrations: [],
    jobs: [],
    ...partial,
  };
}

describe("stitch view tile list", () => {
  it("lists registered hypercubes with no placements as pending", () => {
    const rows = stitchTileList(doc({
      hypercubes: [
        { id: "t1", manifest_path: "/t1.json" },
        { id: "t2", manifest_path: "/t2.json" },
      ],
    }));
    expect(rows).toHaveLength(2);
    expect(rows.every((row) => !row.accepted)).toBe(true);
  });

  it("shows an accepted placement against its tile", () => {
    const rows = stitchTileList(doc({
      hypercubes: [
        { id: "t1", manifest_path: "/t1.json" },
        { id: "t2", manifest_path: "/t2.json" },
      ],
      placements: [{
        tile_id: "t2",
        patch: { x: 100, y: 50, w: 256, h: 256 },
        homography: [1, 0, 0, 0, 1, 0, 0, 0, 1],
        regression_dim: 256,
      }],
      accepted_registrations: ["j1"],
    }));
    const t2 = rows.find((row) => row.tileId === "t2")!;
    expect(t2.accepted).toBe(true);
    expect(t2.patch).toContain("(100, 50)");
    expect(rows.find((row) => row.tileId === "t1")!.accepted).toBe(false);
  });
});

describe("accept flows into the stitch view through the API", () => {
  it("placement appears in the list after POST accept", async () => {
    // a miniature stateful fake of the service
    const state = {
      placements: [] as ProjectDoc["placements"],
      accepted: [] as string[],
    };
    const fakeFetch = async (url: string, init?: RequestInit) => {
      if (url.endsWith("/accept") && init?.method === "POST") {
        const placement = {
          tile_id: "t1",
          patch: { x: 24, y: 24, w: 64, h: 64 },
          homography: [1, 0, 0, 0, 1, 0, 0, 0, 1],
          regression_dim: 256,
        };
        if (!state.accepted.includes("j1")) {
          state.accepted.push("j1");
          state.placements.push(placement);
        }
        return new Response(JSON.stringify({ placement }), { status: 200 });
      }
      if (url.endsWith("/projects/p1")) {
        return new Response(JSON.stringify(doc({
          hypercubes: [{ id: "t1", manifest_path: "/t1.json" }],
          placements: state.placements,
          accepted_registrations: state.accepted,
        })), { status: 200 });
      }
      throw new Error(`unexpected request ${url}`);
    };

    const api = new ApiClient("", fakeFetch as typeof fetch);
    let rows = stitchTileList(await api.getProject("p1"));
    expect(rows[0].accepted).toBe(false);

    await api.accept("p1", "j1");
    const after = await api.getProject("p1");
    rows = stitchTileList(after);
    expect(rows[0].accepted).toBe(true);
    expect(acceptedCount(after)).toBe(1);

    // accepting twice stays idempotent
    await api.accept("p1", "j1");
    expect(acceptedCount(await api.getProject("p1"))).toBe(1);
  });
});
