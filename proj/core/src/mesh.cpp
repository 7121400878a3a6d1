#include "vforest/mesh.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "vforest/io.hpp"

namespace vf {

const char* material_name(Material m) {
    switch (m) {
        case Material::Bark: return "bark";
        case Material::Leaf: return "leaf";
        case Material::Soil: return "soil";
        case Material::Misc: return "misc";
    }
    return "misc";
}

Material material_from_name(const std::string& name) {
    if (name == "bark") return Material::Bark;
    if (name == "leaf") return Material::Leaf;
    if (name == "soil") return Material::Soil;
    if (name == "misc") return Material::Misc;
    throw ValidationError("unknown material name: " + name);
}

Aabb TriangleMesh::bounds() const {
    Aabb box;
    for (const Vec3& v : vertices) box.expand(v);
    return box;
}

void TriangleMesh::validate() const {
    const std::uint32_t n = static_cast<std::uint32_t>(vertices.size());
    for (std::size_t i = 0; i < triangles.size(); ++i) {
        const Triangle& t = triangles[i];
        for (int c = 0; c < 3; ++c)
            if (t.v[c] >= n)
                throw ValidationError("triangle " + std::to_string(i) + ": vertex index out of range");
        if (static_cast<int>(t.material) >= kMaterialCount)
            throw ValidationError("triangle " + std::to_string(i) + ": invalid material tag");
        if (triangle_area(i) < 1e-12)
            throw ValidationError("triangle " + std::to_string(i) + ": degenerate (area < 1e-12 m^2)");
    }
}

std::array<double, kMaterialCount> mesh_material_areas(const TriangleMesh& mesh) {
    std::array<double, kMaterialCount> areas{};
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i)
        areas[static_cast<int>(mesh.triangles[i].material)] += mesh.triangle_area(i);
    return areas;
}

double mesh_total_area(const TriangleMesh& mesh) {
    auto a = mesh_material_areas(mesh);
    return a[0] + a[1] + a[2] + a[3];
}

void write_obj(const TriangleMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << "# voxelforest scene mesh\n";
    for (const Vec3& v : mesh.vertices)
        out << "v " << io::format_double(v.x) << ' ' << io::format_double(v.y) << ' '
            << io::format_double(v.z) << '\n';
    int current = -1;
    for (const Triangle& t : mesh.triangles) {
        if (static_cast<int>(t.material) != current) {
            current = static_cast<int>(t.material);
            out << "usemtl " << material_name(t.material) << '\n';
        }
        // OBJ is 1-based.
        out << "f " << t.v[0] + 1 << ' ' << t.v[1] + 1 << ' ' << t.v[2] + 1 << '\n';
    }
}

TriangleMesh read_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file for reading: " + path);
    TriangleMesh mesh;
    Material current = Material::Misc;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tok;
        if (!(ss >> tok) || tok[0] == '#') continue;
        if (tok == "v") {
            Vec3 v;
            if (!(ss >> v.x >> v.y >> v.z))
                throw ValidationError(path + ":" + std::to_string(lineno) + ": bad vertex line");
            mesh.vertices.push_back(v);
        } else if (tok == "usemtl") {
            std::string name;
            ss >> name;
            current = material_from_name(name);
        } else if (tok == "f") {
            std::uint32_t idx[3];
            for (int c = 0; c < 3; ++c) {
                std::string ref;
                if (!(ss >> ref))
                    throw ValidationError(path + ":" + std::to_string(lineno) + ": face needs 3 vertices");
                // Accept v, v/vt, v/vt/vn references; only the vertex index is used.
                idx[c] = static_cast<std::uint32_t>(std::stoul(ref.substr(0, ref.find('/')))) - 1;
            }
            mesh.triangles.push_back({{idx[0], idx[1], idx[2]}, current});
        }
    }
    return mesh;
}

void write_vfm1(const TriangleMesh& mesh, const std::string& path) {
    io::BinaryWriter w(path);
    w.magic("VFM1");
    w.u32(static_cast<std::uint32_t>(mesh.vertices.size()));
    w.u32(static_cast<std::uint32_t>(mesh.triangles.size()));
    for (const Vec3& v : mesh.vertices) {
        w.f32(static_cast<float>(v.x));
        w.f32(static_cast<float>(v.y));
        w.f32(static_cast<float>(v.z));
    }
    for (const Triangle& t : mesh.triangles) {
        w.u32(t.v[0]);
        w.u32(t.v[1]);
        w.u32(t.v[2]);
        w.u32(static_cast<std::uint32_t>(t.material));
    }
    if (!w.good()) throw ComputeError("write failed: " + path);
}

TriangleMesh read_vfm1(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_magic("VFM1");
    const std::uint32_t nv = r.u32();
    const std::uint32_t nt = r.u32();
    TriangleMesh mesh;
    mesh.vertices.reserve(nv);
    mesh.triangles.reserve(nt);
    for (std::uint32_t i = 0; i < nv; ++i) {
        double x = r.f32(), y = r.f32(), z = r.f32();
        mesh.vertices.push_back({x, y, z});
    }
    for (std::uint32_t i = 0; i < nt; ++i) {
        Triangle t;
        t.v[0] = r.u32();
        t.v[1] = r.u32();
        t.v[2] = r.u32();
        const std::uint32_t m = r.u32();
        if (m >= kMaterialCount) throw ValidationError(path + ": invalid material tag");
        t.material = static_cast<Material>(m);
        mesh.triangles.push_back(t);
    }
    return mesh;
}

static bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

void write_mesh(const TriangleMesh& mesh, const std::string& path) {
    if (has_suffix(path, ".obj")) write_obj(mesh, path);
    else write_vfm1(mesh, path);
}

TriangleMesh read_mesh(const std::string& path) {
    if (has_suffix(path, ".obj")) return read_obj(path);
    return read_vfm1(path);
}

}  // namespace vf
