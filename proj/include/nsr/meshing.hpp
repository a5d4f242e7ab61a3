#pragma once

#include <array>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "nsr/common.hpp"
#include "nsr/random.hpp"

namespace nsr {

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
};

using ScalarField = std::function<double(const Vec3&)>;

// Zero-isosurface triangulation on a regular grid. Each cell is split into
// the six Freudenthal tetrahedra around the main diagonal, which tile space
// consistently, so shared crossing edges get shared vertices and the result
// is watertight for any sign field that changes sign strictly inside the
// grid. Vertices are placed by linear interpolation along crossing edges.
inline Mesh marching_cubes(const ScalarField& field, int resolution,
                           const Vec3& lo = Vec3(-1, -1, -1), const Vec3& hi = Vec3(1, 1, 1)) {
    if (resolution < 8) throw ValidationError("resolution must be at least 8");
    const int n = resolution + 1;  // grid points per axis
    std::vector<double> values(std::size_t(n) * n * n);
    auto point = [&](int x, int y, int z) -> Vec3 {
        return Vec3(lo.x() + (hi.x() - lo.x()) * x / resolution,
                    lo.y() + (hi.y() - lo.y()) * y / resolution,
                    lo.z() + (hi.z() - lo.z()) * z / resolution);
    };
    auto gid = [&](int x, int y, int z) -> std::size_t {
        return (std::size_t(z) * n + y) * n + x;
    };
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) values[gid(x, y, z)] = field(point(x, y, z));
    // Grid samples that sit (almost) exactly on the surface would place
    // crossing vertices on grid corners, collapsing the incident triangles
    // and opening holes.  Snap them slightly inside so every crossing stays
    // clear of the corners; the positional error is ~1e-3 of a cell.
    const double snap = 1e-3 * (hi - lo).cwiseAbs().minCoeff() / resolution;
    for (double& v : values)
        if (std::abs(v) < snap) v = -snap;

    Mesh mesh;
    std::map<std::pair<std::size_t, std::size_t>, int> edge_vertex;
    auto vertex_on_edge = [&](std::size_t a, std::size_t b, const Vec3& pa, const Vec3& pb) -> int {
        auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        double va = values[a], vb = values[b];
        double t = va / (va - vb);
        t = std::min(std::max(t, 0.0), 1.0);
        int idx = int(mesh.vertices.size());
        mesh.vertices.push_back(pa + t * (pb - pa));
        edge_vertex.emplace(key, idx);
        return idx;
    };

    // six axis orders forming the Freudenthal tetrahedra of one cell
    static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                    {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    auto inside = [&](std::size_t g) { return values[g] < 0.0; };

    for (int z = 0; z < resolution; ++z) {
        for (int y = 0; y < resolution; ++y) {
            for (int x = 0; x < resolution; ++x) {
                for (const auto& perm : perms) {
                    int cx[4] = {x, 0, 0, 0}, cy[4] = {y, 0, 0, 0}, cz[4] = {z, 0, 0, 0};
                    for (int k = 0; k < 3; ++k) {
                        cx[k + 1] = cx[k] + (perm[k] == 0 ? 1 : 0);
                        cy[k + 1] = cy[k] + (perm[k] == 1 ? 1 : 0);
                        cz[k + 1] = cz[k] + (perm[k] == 2 ? 1 : 0);
                    }
                    std::size_t g[4];
                    Vec3 p[4];
                    int mask = 0;
                    for (int k = 0; k < 4; ++k) {
                        g[k] = gid(cx[k], cy[k], cz[k]);
                        p[k] = point(cx[k], cy[k], cz[k]);
                        if (inside(g[k])) mask |= 1 << k;
                    }
                    if (mask == 0 || mask == 15) continue;
                    std::vector<int> in, out;
                    for (int k = 0; k < 4; ++k) (mask >> k & 1 ? in : out).push_back(k);
                    auto emit = [&](int a, int b, int c) {
                        Vec3 e1 = mesh.vertices[b] - mesh.vertices[a];
                        Vec3 e2 = mesh.vertices[c] - mesh.vertices[a];
                        if (e1.cross(e2).norm() < 1e-12) return;  // degenerate
                        mesh.triangles.push_back({a, b, c});
                    };
                    if (in.size() == 1 || in.size() == 3) {
                        int apex = in.size() == 1 ? in[0] : out[0];
                        const auto& others = in.size() == 1 ? out : in;
                        int v0 = vertex_on_edge(g[apex], g[others[0]], p[apex], p[others[0]]);
                        int v1 = vertex_on_edge(g[apex], g[others[1]], p[apex], p[others[1]]);
                        int v2 = vertex_on_edge(g[apex], g[others[2]], p[apex], p[others[2]]);
                        emit(v0, v1, v2);
                    } else {  // two inside, two outside: a quad
                        int a = in[0], b = in[1], c = out[0], d = out[1];
                        int v0 = vertex_on_edge(g[a], g[c], p[a], p[c]);
                        int v1 = vertex_on_edge(g[a], g[d], p[a], p[d]);
                        int v2 = vertex_on_edge(g[b], g[d], p[b], p[d]);
                        int v3 = vertex_on_edge(g[b], g[c], p[b], p[c]);
                        emit(v0, v1, v2);
                        emit(v0, v2, v3);
                    }
                }
            }
        }
    }
    if (mesh.triangles.empty()) throw EmptySurface("no sign change inside the grid");
    return mesh;
}

// Every edge of a closed extracted surface is shared by exactly two
// triangles (orientation ignored).
inline bool edges_manifold(const Mesh& mesh) {
    std::map<std::pair<int, int>, int> count;
    for (const auto& t : mesh.triangles) {
        for (int e = 0; e < 3; ++e) {
            int a = t[e], b = t[(e + 1) % 3];
            ++count[a < b ? std::make_pair(a, b) : std::make_pair(b, a)];
        }
    }
    for (const auto& [k, c] : count)
        if (c != 2) return false;
    return !mesh.triangles.empty();
}

// Uniform area-weighted surface samples.
inline std::vector<Vec3> sample_mesh(const Mesh& mesh, int n_samples, uint64_t seed) {
    std::vector<double> cum(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
        Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
        total += 0.5 * e1.cross(e2).norm();
        cum[i] = total;
    }
    if (total <= 0.0) throw EmptySet("mesh has zero surface area");
    Rng rng(seed);
    std::vector<Vec3> out;
    out.reserve(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        double u = rng.uniform() * total;
        std::size_t k = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
        if (k >= mesh.triangles.size()) k = mesh.triangles.size() - 1;
        const auto& t = mesh.triangles[k];
        double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
        out.push_back((1 - r1) * mesh.vertices[t[0]] + r1 * (1 - r2) * mesh.vertices[t[1]] +
                      r1 * r2 * mesh.vertices[t[2]]);
    }
    return out;
}

// Exact nearest-neighbor queries on a uniform grid; identical to the brute
// force double loop, just faster.
class PointGrid {
public:
    explicit PointGrid(const std::vector<Vec3>& pts) : pts_(pts) {
        if (pts.empty()) throw EmptySet("empty point set");
        lo_ = hi_ = pts[0];
        for (const auto& p : pts) {
            lo_ = lo_.cwiseMin(p);
            hi_ = hi_.cwiseMax(p);
        }
        double extent = (hi_ - lo_).maxCoeff();
        int target = std::max(1, int(std::cbrt(double(pts.size()))));
        h_ = extent > 0 ? extent / target : 1.0;
        for (int i = 0; i < int(pts.size()); ++i) cells_[key(cell_of(pts[i]))].push_back(i);
    }

    double nearest_dist(const Vec3& q) const {
        Eigen::Vector3i c = cell_of(q);
        // farthest occupied cell from the query, in Chebyshev rings
        Eigen::Vector3i clo = cell_of(lo_), chi = cell_of(hi_);
        int max_ring = 0;
        for (int k = 0; k < 3; ++k)
            max_ring = std::max(max_ring, std::max(std::abs(c[k] - clo[k]), std::abs(c[k] - chi[k])));
        double best = std::numeric_limits<double>::infinity();
        for (int r = 0; r <= max_ring; ++r) {
            if (best < double(r - 1) * h_) break;  // closer rings already cover the optimum
            scan_ring(q, c, r, best);
        }
        return best;
    }

private:
    std::vector<Vec3> pts_;
    Vec3 lo_, hi_;
    double h_;
    std::unordered_map<int64_t, std::vector<int>> cells_;

    Eigen::Vector3i cell_of(const Vec3& p) const {
        return Eigen::Vector3i(int(std::floor((p.x() - lo_.x()) / h_)),
                               int(std::floor((p.y() - lo_.y()) / h_)),
                               int(std::floor((p.z() - lo_.z()) / h_)));
    }
    static int64_t key(const Eigen::Vector3i& c) {
        return (int64_t(c.x() + 1'000'000) << 42) ^ (int64_t(c.y() + 1'000'000) << 21) ^
               int64_t(c.z() + 1'000'000);
    }
    void scan_ring(const Vec3& q, const Eigen::Vector3i& c, int r, double& best) const {
        for (int dz = -r; dz <= r; ++dz) {
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
                    auto it = cells_.find(key(c + Eigen::Vector3i(dx, dy, dz)));
                    if (it == cells_.end()) continue;
                    for (int i : it->second) best = std::min(best, (pts_[i] - q).norm());
                }
            }
        }
    }
};

struct ChamferResult {
    double accuracy = 0.0;     // mean over A of nearest distance in B
    double completeness = 0.0;  // mean over B of nearest distance in A
    double mean = 0.0;
};

inline ChamferResult chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) throw EmptySet("chamfer distance of an empty set");
    PointGrid ga(a), gb(b);
    ChamferResult r;
    for (const auto& p : a) r.accuracy += gb.nearest_dist(p);
    r.accuracy /= double(a.size());
    for (const auto& p : b) r.completeness += ga.nearest_dist(p);
    r.completeness /= double(b.size());
    r.mean = 0.5 * (r.accuracy + r.completeness);
    return r;
}

// ASCII PLY with vertex/face elements.
inline void save_ply(const std::string& path, const Mesh& mesh) {
    std::ofstream os(path);
    if (!os) throw ParseError("cannot open mesh for writing: " + path);
    os << "ply\nformat ascii 1.0\n";
    os << "element vertex " << mesh.vertices.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    os << "element face " << mesh.triangles.size() << "\n";
    os << "property list uchar int vertex_indices\nend_header\n";
    os.precision(9);
    for (const auto& v : mesh.vertices) os << v.x() << " " << v.y() << " " << v.z() << "\n";
    for (const auto& t : mesh.triangles) os << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
}

inline Mesh load_ply(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open mesh: " + path);
    std::string line;
    std::size_t n_verts = 0, n_faces = 0;
    if (!std::getline(is, line) || line != "ply") throw ParseError("not a PLY file: " + path);
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "element") {
            std::string what;
            ss >> what;
            if (what == "vertex") ss >> n_verts;
            if (what == "face") ss >> n_faces;
        } else if (tok == "end_header") {
            break;
        }
    }
    Mesh mesh;
    mesh.vertices.reserve(n_verts);
    for (std::size_t i = 0; i < n_verts; ++i) {
        double x, y, z;
        if (!(is >> x >> y >> z)) throw ParseError("truncated vertex list in " + path);
        mesh.vertices.emplace_back(x, y, z);
    }
    for (std::size_t i = 0; i < n_faces; ++i) {
        int n, a, b, c;
        if (!(is >> n >> a >> b >> c) || n != 3)
            throw ParseError("non-triangle face in " + path);
        mesh.triangles.push_back({a, b, c});
    }
    return mesh;
}

}  // namespace nsr
