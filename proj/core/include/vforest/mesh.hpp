#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vforest/common.hpp"

namespace vf {

enum class Material : std::uint8_t { Bark = 0, Leaf = 1, Soil = 2, Misc = 3 };

inline constexpr int kMaterialCount = 4;

const char* material_name(Material m);
Material material_from_name(const std::string& name);

struct Triangle {
    std::uint32_t v[3];
    Material material;
};

// Material-labeled triangle soup. Indices reference `vertices`.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;

    std::size_t triangle_count() const { return triangles.size(); }

    Vec3 vertex(const Triangle& t, int corner) const { return vertices[t.v[corner]]; }

    double triangle_area(std::size_t i) const {
        const Triangle& t = triangles[i];
        return vf::triangle_area(vertices[t.v[0]], vertices[t.v[1]], vertices[t.v[2]]);
    }

    Aabb bounds() const;

    // Index range, material validity and the 1e-12 m^2 degenerate-area floor.
    void validate() const;
};

// Per-material sum of triangle areas (0.5 * |cross product|).
std::array<double, kMaterialCount> mesh_material_areas(const TriangleMesh& mesh);

double mesh_total_area(const TriangleMesh& mesh);

// OBJ text with one `usemtl bark|leaf|soil|misc` group per material run.
void write_obj(const TriangleMesh& mesh, const std::string& path);
TriangleMesh read_obj(const std::string& path);

// Compact binary form "VFM1": little-endian, 32-bit counts, binary32 coordinates.
void write_vfm1(const TriangleMesh& mesh, const std::string& path);
TriangleMesh read_vfm1(const std::string& path);

// Dispatch on extension: .obj -> OBJ text, anything else -> VFM1.
void write_mesh(const TriangleMesh& mesh, const std::string& path);
TriangleMesh read_mesh(const std::string& path);

}  // namespace vf
