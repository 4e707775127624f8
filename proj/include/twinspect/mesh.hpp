// mesh.hpp — indexed triangle meshes, ASCII OFF-style IO, part maps, and the
// built-in procedural models used by the default dataset.
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "twinspect/geometry.hpp"

namespace twinspect::mesh {

using geom::Vec3;

TWINSPECT_ERROR(MeshFormatError);
TWINSPECT_ERROR(InvalidMesh);
TWINSPECT_ERROR(UnknownPart);

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<float> albedo;  // per face, in [0,1]
    // Named sub-parts as [begin, end) triangle ranges. Builders keep part
    // vertex sets disjoint so a part can be translated independently.
    std::map<std::string, std::pair<int, int>> parts;

    void validate() const;

    Vec3 bbox_min() const;
    Vec3 bbox_max() const;
    Vec3 bbox_center() const { return 0.5 * (bbox_min() + bbox_max()); }
    // Sphere centered on the bbox center covering every vertex.
    double bounding_sphere_radius() const;
};

// Returns a copy with the named part's vertices shifted by delta.
TriMesh translate_part(const TriMesh& m, const std::string& part, const Vec3& delta);

// ASCII OFF-style: optional "OFF" header, then "nv nf [ne]", vertex lines,
// and "3 i j k [albedo]" face lines. A sidecar part map (one
// "name begin end" line per part) rides next to the mesh file.
TriMesh load_off(const std::string& path);
void save_off(const std::string& path, const TriMesh& m);
void load_part_map(TriMesh& m, const std::string& path);
void save_part_map(const TriMesh& m, const std::string& path);

// Procedural fixtures. Dimensions are desk-scale meters.
TriMesh make_cube(double edge);
TriMesh make_uv_sphere(double radius, int stacks, int slices);
// Training-category object: block + offset flange + corner boss.
TriMesh make_flanged_block();
// Novel-category object with named movable parts (base/arm/pin/cap).
TriMesh make_jointed_bracket();
// Resolve "builtin:<name>" or a filesystem path.
TriMesh load_mesh_spec(const std::string& spec);

}  // namespace twinspect::mesh
