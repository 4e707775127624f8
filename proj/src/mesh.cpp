#include "twinspect/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace twinspect::mesh {

void TriMesh::validate() const {
    if (triangles.empty()) throw InvalidMesh("mesh has no triangles");
    const int nv = int(vertices.size());
    for (const auto& t : triangles)
        for (int idx : t)
            if (idx < 0 || idx >= nv) throw InvalidMesh("triangle index out of range");
    if (albedo.size() != triangles.size()) throw InvalidMesh("albedo count != face count");
    for (float a : albedo)
        if (!(a >= 0.0f && a <= 1.0f)) throw InvalidMesh("albedo outside [0,1]");
    if (bounding_sphere_radius() <= 0) throw InvalidMesh("degenerate bounding sphere");
    const int nf = int(triangles.size());
    for (const auto& [name, range] : parts)
        if (range.first < 0 || range.second > nf || range.first >= range.second)
            throw InvalidMesh("part range invalid: " + name);
}

Vec3 TriMesh::bbox_min() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    for (const auto& v : vertices) lo = lo.cwiseMin(v);
    return lo;
}

Vec3 TriMesh::bbox_max() const {
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
    for (const auto& v : vertices) hi = hi.cwiseMax(v);
    return hi;
}

double TriMesh::bounding_sphere_radius() const {
    const Vec3 c = bbox_center();
    double r2 = 0;
    for (const auto& v : vertices) r2 = std::max(r2, (v - c).squaredNorm());
    return std::sqrt(r2);
}

TriMesh translate_part(const TriMesh& m, const std::string& part, const Vec3& delta) {
    auto it = m.parts.find(part);
    if (it == m.parts.end()) throw UnknownPart("no such part: " + part);
    std::set<int> moved;
    for (int f = it->second.first; f < it->second.second; ++f)
        for (int idx : m.triangles[size_t(f)]) moved.insert(idx);
    TriMesh out = m;
    for (int idx : moved) out.vertices[size_t(idx)] += delta;
    return out;
}

TriMesh load_off(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MeshFormatError("cannot open: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
    }
    size_t pos = 0;
    auto next = [&]() -> const std::string& {
        if (pos >= tokens.size()) throw MeshFormatError("truncated mesh file: " + path);
        return tokens[pos++];
    };
    if (!tokens.empty() && tokens[0] == "OFF") ++pos;
    const int nv = std::stoi(next());
    const int nf = std::stoi(next());
    // Tolerate the classic OFF edge-count field.
    if (pos < tokens.size() && tokens[pos].find('.') == std::string::npos &&
        size_t(nv) * 3 + pos + 1 <= tokens.size()) {
        size_t remaining = tokens.size() - pos;
        if (remaining == size_t(nv) * 3 + size_t(nf) * 4 + 1 ||
            remaining == size_t(nv) * 3 + size_t(nf) * 5 + 1)
            ++pos;
    }
    TriMesh m;
    m.vertices.reserve(size_t(nv));
    for (int i = 0; i < nv; ++i) {
        double x = std::stod(next());
        double y = std::stod(next());
        double z = std::stod(next());
        m.vertices.emplace_back(x, y, z);
    }
    for (int f = 0; f < nf; ++f) {
        const int arity = std::stoi(next());
        if (arity != 3) throw MeshFormatError("non-triangle face in " + path);
        int a = std::stoi(next());
        int b = std::stoi(next());
        int c = std::stoi(next());
        m.triangles.push_back({a, b, c});
        float alb = 0.8f;
        // Optional trailing per-face albedo.
        if (pos < tokens.size() && tokens[pos].find('.') != std::string::npos)
            alb = std::stof(next());
        m.albedo.push_back(alb);
    }
    m.validate();
    return m;
}

void save_off(const std::string& path, const TriMesh& m) {
    std::ofstream os(path);
    if (!os) throw MeshFormatError("cannot open for write: " + path);
    os << "OFF\n" << m.vertices.size() << " " << m.triangles.size() << " 0\n";
    os.precision(17);
    for (const auto& v : m.vertices) os << v.x() << " " << v.y() << " " << v.z() << "\n";
    for (size_t f = 0; f < m.triangles.size(); ++f) {
        const auto& t = m.triangles[f];
        os << "3 " << t[0] << " " << t[1] << " " << t[2] << " " << m.albedo[f] << "\n";
    }
    if (!os) throw MeshFormatError("write failed: " + path);
}

void load_part_map(TriMesh& m, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw MeshFormatError("cannot open part map: " + path);
    std::string name;
    int begin, end;
    while (is >> name >> begin >> end) m.parts[name] = {begin, end};
    m.validate();
}

void save_part_map(const TriMesh& m, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw MeshFormatError("cannot open for write: " + path);
    for (const auto& [name, range] : m.parts)
        os << name << " " << range.first << " " << range.second << "\n";
}

namespace {

// Appends an axis-aligned box; 12 triangles with outward winding.
void append_box(TriMesh& m, const Vec3& center, const Vec3& size, float albedo) {
    const Vec3 h = 0.5 * size;
    const int base = int(m.vertices.size());
    for (int i = 0; i < 8; ++i)
        m.vertices.emplace_back(center.x() + ((i & 1) ? h.x() : -h.x()),
                                center.y() + ((i & 2) ? h.y() : -h.y()),
                                center.z() + ((i & 4) ? h.z() : -h.z()));
    static const int faces[12][3] = {
        {0, 2, 1}, {1, 2, 3},  // z-
        {4, 5, 6}, {5, 7, 6},  // z+
        {0, 1, 4}, {1, 5, 4},  // y-
        {2, 6, 3}, {3, 6, 7},  // y+
        {0, 4, 2}, {2, 4, 6},  // x-
        {1, 3, 5}, {3, 7, 5},  // x+
    };
    for (const auto& f : faces) {
        m.triangles.push_back({base + f[0], base + f[1], base + f[2]});
        m.albedo.push_back(albedo);
    }
}

// Appends a closed n-gon prism along +z.
void append_prism(TriMesh& m, const Vec3& base_center, double radius, double height, int sides,
                  float albedo) {
    const int base = int(m.vertices.size());
    for (int ring = 0; ring < 2; ++ring)
        for (int i = 0; i < sides; ++i) {
            const double a = 2.0 * 3.14159265358979323846 * i / sides;
            m.vertices.emplace_back(base_center.x() + radius * std::cos(a),
                                    base_center.y() + radius * std::sin(a),
                                    base_center.z() + ring * height);
        }
    auto add = [&](int a, int b, int c) {
        m.triangles.push_back({a, b, c});
        m.albedo.push_back(albedo);
    };
    for (int i = 0; i < sides; ++i) {
        const int j = (i + 1) % sides;
        add(base + i, base + j, base + sides + i);
        add(base + j, base + sides + j, base + sides + i);
    }
    // caps (fan)
    for (int i = 1; i + 1 < sides; ++i) {
        add(base, base + i + 1, base + i);
        add(base + sides, base + sides + i, base + sides + i + 1);
    }
}

void mark_part(TriMesh& m, const std::string& name, int begin) {
    m.parts[name] = {begin, int(m.triangles.size())};
}

}  // namespace

TriMesh make_cube(double edge) {
    TriMesh m;
    append_box(m, Vec3::Zero(), Vec3::Constant(edge), 0.8f);
    m.validate();
    return m;
}

TriMesh make_uv_sphere(double radius, int stacks, int slices) {
    TriMesh m;
    for (int i = 0; i <= stacks; ++i) {
        const double phi = 3.14159265358979323846 * i / stacks;
        for (int j = 0; j < slices; ++j) {
            const double th = 2.0 * 3.14159265358979323846 * j / slices;
            m.vertices.emplace_back(radius * std::sin(phi) * std::cos(th),
                                    radius * std::sin(phi) * std::sin(th),
                                    radius * std::cos(phi));
        }
    }
    auto idx = [&](int i, int j) { return i * slices + (j % slices); };
    for (int i = 0; i < stacks; ++i)
        for (int j = 0; j < slices; ++j) {
            m.triangles.push_back({idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)});
            m.albedo.push_back(0.8f);
            m.triangles.push_back({idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)});
            m.albedo.push_back(0.8f);
        }
    m.validate();
    return m;
}

TriMesh make_flanged_block() {
    TriMesh m;
    int begin = 0;
    append_box(m, Vec3(0, 0, 0.030), Vec3(0.096, 0.072, 0.060), 0.62f);
    mark_part(m, "block", begin);

    begin = int(m.triangles.size());
    // Flange plate hanging off the +x face, shifted toward -y.
    append_box(m, Vec3(0.070, -0.012, 0.009), Vec3(0.052, 0.092, 0.018), 0.88f);
    mark_part(m, "flange", begin);

    begin = int(m.triangles.size());
    // Corner boss on top.
    append_prism(m, Vec3(-0.026, 0.020, 0.060), 0.0165, 0.030, 10, 0.45f);
    mark_part(m, "boss", begin);

    begin = int(m.triangles.size());
    // Small asymmetric tab to break silhouette symmetries.
    append_box(m, Vec3(-0.052, -0.028, 0.047), Vec3(0.022, 0.016, 0.026), 0.75f);
    mark_part(m, "tab", begin);

    m.validate();
    return m;
}

TriMesh make_jointed_bracket() {
    TriMesh m;
    int begin = 0;
    append_box(m, Vec3(0, 0, 0.008), Vec3(0.120, 0.084, 0.016), 0.70f);
    mark_part(m, "base", begin);

    begin = int(m.triangles.size());
    // Raised arm running along +x, off-center in y.
    append_box(m, Vec3(0.018, 0.016, 0.036), Vec3(0.084, 0.030, 0.040), 0.52f);
    mark_part(m, "arm", begin);

    begin = int(m.triangles.size());
    // Pin standing on the arm.
    append_prism(m, Vec3(0.040, 0.016, 0.056), 0.0105, 0.034, 8, 0.90f);
    mark_part(m, "pin", begin);

    begin = int(m.triangles.size());
    // Cap block next to the arm on the base.
    append_box(m, Vec3(-0.038, -0.024, 0.028), Vec3(0.030, 0.026, 0.024), 0.40f);
    mark_part(m, "cap", begin);

    m.validate();
    return m;
}

TriMesh load_mesh_spec(const std::string& spec) {
    if (spec == "builtin:flanged_block") return make_flanged_block();
    if (spec == "builtin:jointed_bracket") return make_jointed_bracket();
    if (spec == "builtin:cube") return make_cube(0.08);
    if (spec == "builtin:sphere") return make_uv_sphere(0.05, 24, 48);
    if (spec.rfind("builtin:", 0) == 0) throw MeshFormatError("unknown builtin mesh: " + spec);
    TriMesh m = load_off(spec);
    std::string side = spec + ".parts";
    if (std::ifstream probe(side); probe) load_part_map(m, side);
    return m;
}

}  // namespace twinspect::mesh
