#include "vforest/scenegen.hpp"

#include <algorithm>
#include <cmath>

#include "vforest/rng.hpp"

namespace vf {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kReliefAmp = 0.5;  // peak-to-peak ground relief, meters

// Stream tags for per-object RNG keying.
enum : std::uint64_t { kGroundKey = 1, kTreeKey = 2, kShrubKey = 3, kMiscKey = 4 };

double ground_height(const SceneConfig& cfg, double x, double y) {
    const double kx = 2.0 * kPi * 3.0 / cfg.extent.x;
    const double ky = 2.0 * kPi * 2.0 / cfg.extent.y;
    return 0.5 * kReliefAmp * (1.0 + std::sin(kx * x) * std::cos(ky * y));
}

void add_triangle(TriangleMesh& mesh, const Vec3& a, const Vec3& b, const Vec3& c, Material m) {
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(a);
    mesh.vertices.push_back(b);
    mesh.vertices.push_back(c);
    mesh.triangles.push_back({{base, base + 1, base + 2}, m});
}

void add_ground(TriangleMesh& mesh, const SceneConfig& cfg) {
    const double cell = std::clamp(std::max(cfg.extent.x, cfg.extent.y) / 64.0, 0.5, 4.0);
    const int nx = std::max(1, static_cast<int>(std::ceil(cfg.extent.x / cell)));
    const int ny = std::max(1, static_cast<int>(std::ceil(cfg.extent.y / cell)));
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    for (int j = 0; j <= ny; ++j) {
        const double y = cfg.extent.y * j / ny;
        for (int i = 0; i <= nx; ++i) {
            const double x = cfg.extent.x * i / nx;
            mesh.vertices.push_back({x, y, ground_height(cfg, x, y)});
        }
    }
    auto vid = [&](int i, int j) { return base + static_cast<std::uint32_t>(j * (nx + 1) + i); };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            mesh.triangles.push_back({{vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)}, Material::Soil});
            mesh.triangles.push_back({{vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)}, Material::Soil});
        }
}

// Open tube along +z from `base`, tessellated with `segments` side quads.
void add_cylinder(TriangleMesh& mesh, const Vec3& base, const Vec3& axis, double radius,
                  int segments, Material m) {
    // Orthonormal frame around the axis.
    const Vec3 w = axis.normalized();
    Vec3 u = std::fabs(w.z) < 0.9 ? Vec3{0, 0, 1}.cross(w) : Vec3{1, 0, 0}.cross(w);
    u = u.normalized();
    const Vec3 v = w.cross(u);

    const auto start = static_cast<std::uint32_t>(mesh.vertices.size());
    for (int s = 0; s < segments; ++s) {
        const double a = 2.0 * kPi * s / segments;
        const Vec3 rim = u * (radius * std::cos(a)) + v * (radius * std::sin(a));
        mesh.vertices.push_back(base + rim);
        mesh.vertices.push_back(base + axis + rim);
    }
    for (int s = 0; s < segments; ++s) {
        const std::uint32_t a0 = start + 2 * s;
        const std::uint32_t a1 = start + 2 * ((s + 1) % segments);
        mesh.triangles.push_back({{a0, a1, a0 + 1}, m});
        mesh.triangles.push_back({{a1, a1 + 1, a0 + 1}, m});
    }
}

// Lat-long ellipsoid shell sized to roughly `target_tris` triangles.
void add_ellipsoid(TriangleMesh& mesh, const Vec3& center, const Vec3& semi, int target_tris,
                   Material m) {
    target_tris = std::max(target_tris, 24);
    const int segs = std::clamp(static_cast<int>(std::lround(std::sqrt(target_tris / 2.0))), 6, 96);
    const int rings = std::max(3, static_cast<int>(std::lround(target_tris / (2.0 * segs))) + 1);

    const auto start = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(center - Vec3{0, 0, semi.z});  // bottom pole
    for (int r = 1; r < rings; ++r) {
        const double phi = kPi * r / rings - kPi / 2.0;  // latitude
        for (int s = 0; s < segs; ++s) {
            const double th = 2.0 * kPi * s / segs;
            mesh.vertices.push_back(center + Vec3{semi.x * std::cos(phi) * std::cos(th),
                                                  semi.y * std::cos(phi) * std::sin(th),
                                                  semi.z * std::sin(phi)});
        }
    }
    mesh.vertices.push_back(center + Vec3{0, 0, semi.z});  // top pole
    const std::uint32_t top = static_cast<std::uint32_t>(mesh.vertices.size()) - 1;

    auto ring_v = [&](int r, int s) {
        return start + 1 + static_cast<std::uint32_t>((r - 1) * segs + (s % segs));
    };
    for (int s = 0; s < segs; ++s)
        mesh.triangles.push_back({{start, ring_v(1, s + 1), ring_v(1, s)}, m});
    for (int r = 1; r + 1 < rings; ++r)
        for (int s = 0; s < segs; ++s) {
            mesh.triangles.push_back({{ring_v(r, s), ring_v(r, s + 1), ring_v(r + 1, s)}, m});
            mesh.triangles.push_back({{ring_v(r, s + 1), ring_v(r + 1, s + 1), ring_v(r + 1, s)}, m});
        }
    for (int s = 0; s < segs; ++s)
        mesh.triangles.push_back({{ring_v(rings - 1, s), ring_v(rings - 1, s + 1), top}, m});
}

void add_box(TriangleMesh& mesh, const Vec3& lo, const Vec3& hi, Material m) {
    const auto b = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back({lo.x, lo.y, lo.z});
    mesh.vertices.push_back({hi.x, lo.y, lo.z});
    mesh.vertices.push_back({hi.x, hi.y, lo.z});
    mesh.vertices.push_back({lo.x, hi.y, lo.z});
    mesh.vertices.push_back({lo.x, lo.y, hi.z});
    mesh.vertices.push_back({hi.x, lo.y, hi.z});
    mesh.vertices.push_back({hi.x, hi.y, hi.z});
    mesh.vertices.push_back({lo.x, hi.y, hi.z});
    static const int faces[12][3] = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7},
                                     {0, 1, 5}, {0, 5, 4}, {2, 3, 7}, {2, 7, 6},
                                     {1, 2, 6}, {1, 6, 5}, {3, 0, 4}, {3, 4, 7}};
    for (const auto& f : faces)
        mesh.triangles.push_back({{b + static_cast<std::uint32_t>(f[0]),
                                   b + static_cast<std::uint32_t>(f[1]),
                                   b + static_cast<std::uint32_t>(f[2])}, m});
}

// Horizontal placement range with per-class margin; errors name the class.
void placement_range(const SceneConfig& cfg, double margin, const char* what,
                     double& x0, double& x1, double& y0, double& y1) {
    x0 = margin;
    x1 = cfg.extent.x - margin;
    y0 = margin;
    y1 = cfg.extent.y - margin;
    if (x1 <= x0 || y1 <= y0)
        throw ValidationError(std::string("cannot place ") + what +
                              ": extent too small for margin " + std::to_string(margin));
}

void add_tree(TriangleMesh& mesh, const SceneConfig& cfg, int index) {
    Rng rng = Rng(cfg.rng_seed).fork(kTreeKey, static_cast<std::uint64_t>(index));

    const double max_crown = std::min(3.5, std::max(0.4, cfg.extent.x / 2.0 - 0.5));
    double x0, x1, y0, y1;
    placement_range(cfg, max_crown, "tree", x0, x1, y0, y1);
    if (cfg.extent.z < 4.0) throw ValidationError("cannot place tree: extent too small in z");

    const Vec3 base{rng.uniform(x0, x1), rng.uniform(y0, y1), 0.0};
    const double height = rng.uniform(0.55, 0.85) * cfg.extent.z;
    const double trunk_h = 0.45 * height;
    const double trunk_r = rng.uniform(0.12, 0.25);
    add_cylinder(mesh, base, {0, 0, trunk_h}, trunk_r, 10, Material::Bark);

    const double crown_c = (height - trunk_h) / 1.8;
    const double crown_a = std::min(max_crown, rng.uniform(1.4, 3.2));
    const double crown_b = std::min(max_crown, rng.uniform(1.4, 3.2));
    const Vec3 crown_center = base + Vec3{0, 0, trunk_h + crown_c * 0.8};

    // Branches fan out below the crown.
    const int branches = 2 + static_cast<int>(rng.next_below(3));
    for (int b = 0; b < branches; ++b) {
        const double az = rng.uniform(0, 2 * kPi);
        const double len = std::min(crown_a, crown_b) * rng.uniform(0.5, 0.9);
        const double tilt = rng.uniform(0.3, 0.8);
        const Vec3 dir{std::cos(az) * std::cos(tilt) * len, std::sin(az) * std::cos(tilt) * len,
                       std::sin(tilt) * len};
        const Vec3 origin = base + Vec3{0, 0, trunk_h * rng.uniform(0.75, 1.0)};
        add_cylinder(mesh, origin, dir, trunk_r * 0.4, 6, Material::Bark);
    }

    const double volume = 4.0 / 3.0 * kPi * crown_a * crown_b * crown_c;
    const int tris = static_cast<int>(std::lround(cfg.leaf_density * volume));
    add_ellipsoid(mesh, crown_center, {crown_a, crown_b, crown_c}, tris, Material::Leaf);
}

void add_shrub(TriangleMesh& mesh, const SceneConfig& cfg, int index) {
    Rng rng = Rng(cfg.rng_seed).fork(kShrubKey, static_cast<std::uint64_t>(index));
    const double max_r = std::min(1.3, std::max(0.3, cfg.extent.x / 2.0 - 0.2));
    double x0, x1, y0, y1;
    placement_range(cfg, max_r, "shrub", x0, x1, y0, y1);

    const Vec3 semi{std::min(max_r, rng.uniform(0.5, 1.3)), std::min(max_r, rng.uniform(0.5, 1.3)),
                    rng.uniform(0.4, 1.0)};
    const Vec3 center{rng.uniform(x0, x1), rng.uniform(y0, y1), kReliefAmp + semi.z};
    const double volume = 4.0 / 3.0 * kPi * semi.x * semi.y * semi.z;
    const int tris = static_cast<int>(std::lround(cfg.leaf_density * volume));
    add_ellipsoid(mesh, center, semi, tris, Material::Leaf);
}

void add_misc(TriangleMesh& mesh, const SceneConfig& cfg, int index) {
    Rng rng = Rng(cfg.rng_seed).fork(kMiscKey, static_cast<std::uint64_t>(index));
    const double w = rng.uniform(1.5, 2.5);
    const double d = rng.uniform(2.0, 5.0);
    const double h = std::min(cfg.extent.z * 0.3, rng.uniform(1.5, 4.0));
    double x0, x1, y0, y1;
    placement_range(cfg, std::max(w, d) / 2.0 + 0.1, "misc object", x0, x1, y0, y1);
    const double cx = rng.uniform(x0, x1);
    const double cy = rng.uniform(y0, y1);
    add_box(mesh, {cx - w / 2, cy - d / 2, 0.0}, {cx + w / 2, cy + d / 2, h}, Material::Misc);
}

}  // namespace

void SceneConfig::validate() const {
    if (extent.x <= 0 || extent.y <= 0 || extent.z <= 0)
        throw ValidationError("scene extent must be positive");
    if (tree_count < 0 || shrub_count < 0 || misc_count < 0)
        throw ValidationError("object counts must be >= 0");
    if (leaf_density <= 0) throw ValidationError("leaf_density must be > 0");
}

TriangleMesh generate_scene(const SceneConfig& config) {
    config.validate();
    TriangleMesh mesh;
    add_ground(mesh, config);
    for (int i = 0; i < config.tree_count; ++i) add_tree(mesh, config, i);
    for (int i = 0; i < config.shrub_count; ++i) add_shrub(mesh, config, i);
    for (int i = 0; i < config.misc_count; ++i) add_misc(mesh, config, i);
    mesh.validate();
    return mesh;
}

}  // namespace vf
