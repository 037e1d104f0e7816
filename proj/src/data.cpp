#include "pointdisc/data.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pointdisc/error.hpp"

namespace pointdisc {

namespace {
constexpr double kPi = std::numbers::pi;
}

// ---------------------------------------------------------------------------
// synthetic shapes
// ---------------------------------------------------------------------------

std::vector<Vec3> sample_class_surface(ShapeClass cls, std::size_t n, Rng& rng) {
    std::vector<Vec3> pts;
    pts.reserve(n);
    switch (cls) {
        case ShapeClass::sphere: {
            for (std::size_t i = 0; i < n; ++i) {
                Vec3 g(rng.normal(), rng.normal(), rng.normal());
                double len = g.norm();
                while (len < 1e-12) {  // essentially never; re-draw a degenerate gaussian
                    g = Vec3(rng.normal(), rng.normal(), rng.normal());
                    len = g.norm();
                }
                pts.push_back(g / len);
            }
            break;
        }
        case ShapeClass::cube: {
            // edge 1, six equal-area faces
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t face = rng.index(6);
                const double u = rng.uniform(-0.5, 0.5);
                const double v = rng.uniform(-0.5, 0.5);
                const double s = (face % 2 == 0) ? 0.5 : -0.5;
                switch (face / 2) {
                    case 0: pts.emplace_back(s, u, v); break;
                    case 1: pts.emplace_back(u, s, v); break;
                    default: pts.emplace_back(u, v, s); break;
                }
            }
            break;
        }
        case ShapeClass::cylinder: {
            const double r = 0.5, h = 1.6;
            const double lateral = 2.0 * kPi * r * h;
            const double caps = 2.0 * kPi * r * r;
            const double p_lateral = lateral / (lateral + caps);
            for (std::size_t i = 0; i < n; ++i) {
                if (rng.uniform() < p_lateral) {
                    const double theta = rng.uniform(0.0, 2.0 * kPi);
                    const double z = rng.uniform(-0.5 * h, 0.5 * h);
                    pts.emplace_back(r * std::cos(theta), r * std::sin(theta), z);
                } else {
                    const double z = rng.uniform() < 0.5 ? 0.5 * h : -0.5 * h;
                    const double rr = r * std::sqrt(rng.uniform());
                    const double theta = rng.uniform(0.0, 2.0 * kPi);
                    pts.emplace_back(rr * std::cos(theta), rr * std::sin(theta), z);
                }
            }
            break;
        }
        case ShapeClass::torus: {
            // density over the minor angle is proportional to R + r*cos(v)
            const double big_r = 0.7, small_r = 0.25;
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform(0.0, 2.0 * kPi);
                double v = 0.0;
                for (;;) {
                    v = rng.uniform(0.0, 2.0 * kPi);
                    const double accept = (big_r + small_r * std::cos(v)) / (big_r + small_r);
                    if (rng.uniform() <= accept) break;
                }
                const double ring = big_r + small_r * std::cos(v);
                pts.emplace_back(ring * std::cos(u), ring * std::sin(u), small_r * std::sin(v));
            }
            break;
        }
    }
    return pts;
}

namespace {

Eigen::Matrix3d rotation_about_axis(const Vec3& axis, double angle) {
    Eigen::Matrix3d k;
    k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
    return Eigen::Matrix3d::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
}

}  // namespace

PointCloud gen_synthetic(ShapeClass cls, std::size_t n_points, std::uint64_t seed) {
    Rng rng = derive_rng(seed, StreamTag::data_gen, static_cast<std::uint64_t>(cls));
    std::vector<Vec3> pts = sample_class_surface(cls, n_points, rng);

    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
    axis.normalize();
    const Eigen::Matrix3d rot = rotation_about_axis(axis, rng.uniform(0.0, 2.0 * kPi));
    const double scale = rng.uniform(0.8, 1.2);

    PointCloud cloud;
    cloud.points.reserve(n_points);
    for (const auto& p : pts) {
        Vec3 q = scale * (rot * p);
        q += Vec3(rng.normal(0.0, 0.01), rng.normal(0.0, 0.01), rng.normal(0.0, 0.01));
        cloud.points.push_back(q);
    }
    cloud.label = static_cast<std::uint32_t>(cls);
    return normalize_cloud(cloud);
}

Dataset gen_synthetic_dataset(std::size_t n_per_class, std::size_t n_points, std::uint64_t seed,
                              const std::string& split) {
    Dataset ds;
    ds.class_names = shape_class_names();
    ds.split = split;
    ds.seed = seed;
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            std::uint64_t cloud_seed = seed;
            splitmix64(cloud_seed);
            cloud_seed ^= (c + 1) * 0x9e3779b97f4a7c15ULL + i;
            PointCloud pc = gen_synthetic(static_cast<ShapeClass>(c), n_points, cloud_seed);
            pc.id = ds.class_names[c] + "_" + std::to_string(i);
            ds.clouds.push_back(std::move(pc));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// OFF meshes
// ---------------------------------------------------------------------------

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

namespace {

// Token with the 1-based line it came from.
struct Token {
    std::string text;
    int line;
};

std::vector<Token> tokenize_off(std::string_view text) {
    std::vector<Token> tokens;
    int line = 1;
    std::string cur;
    int cur_line = 1;
    auto flush = [&] {
        if (!cur.empty()) {
            tokens.push_back({cur, cur_line});
            cur.clear();
        }
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (ch == '#') {
            flush();
            while (i < text.size() && text[i] != '\n') ++i;
            ++line;
            continue;
        }
        if (ch == '\n') {
            flush();
            ++line;
            continue;
        }
        if (ch == ' ' || ch == '\t' || ch == '\r') {
            flush();
            continue;
        }
        if (cur.empty()) cur_line = line;
        cur.push_back(ch);
    }
    flush();
    return tokens;
}

double parse_double_token(const Token& t) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(t.text, &pos);
    } catch (const std::exception&) {
        throw ParseError("OFF: expected a number, got '" + t.text + "'", t.line);
    }
    if (pos != t.text.size())
        throw ParseError("OFF: expected a number, got '" + t.text + "'", t.line);
    return v;
}

std::int64_t parse_int_token(const Token& t) {
    for (char c : t.text)
        if (!std::isdigit(static_cast<unsigned char>(c)) && c != '-' && c != '+')
            throw ParseError("OFF: expected an integer, got '" + t.text + "'", t.line);
    try {
        return std::stoll(t.text);
    } catch (const std::exception&) {
        throw ParseError("OFF: expected an integer, got '" + t.text + "'", t.line);
    }
}

}  // namespace

Mesh parse_off(std::string_view text) {
    std::vector<Token> tokens = tokenize_off(text);
    if (tokens.empty()) throw ParseError("OFF: empty input", 1);

    std::size_t pos = 0;
    // header: "OFF", possibly fused with the first count as in "OFF3"
    if (tokens[0].text.rfind("OFF", 0) != 0)
        throw ParseError("OFF: missing OFF header", tokens[0].line);
    std::string fused = tokens[0].text.substr(3);
    ++pos;

    std::array<std::int64_t, 3> counts{};
    std::size_t count_idx = 0;
    if (!fused.empty()) counts[count_idx++] = parse_int_token({fused, tokens[0].line});
    while (count_idx < 3) {
        if (pos >= tokens.size())
            throw ParseError("OFF: truncated header counts", tokens.back().line);
        counts[count_idx++] = parse_int_token(tokens[pos]);
        ++pos;
    }
    const std::int64_t n_vertices = counts[0], n_faces = counts[1];
    if (n_vertices < 0 || n_faces < 0)
        throw ParseError("OFF: negative count in header", tokens[0].line);

    Mesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>(n_vertices));
    for (std::int64_t v = 0; v < n_vertices; ++v) {
        if (pos + 2 >= tokens.size())
            throw ParseError("OFF: vertex section shorter than the header count",
                             tokens.back().line);
        const double x = parse_double_token(tokens[pos]);
        const double y = parse_double_token(tokens[pos + 1]);
        const double z = parse_double_token(tokens[pos + 2]);
        pos += 3;
        mesh.vertices.emplace_back(x, y, z);
    }

    for (std::int64_t f = 0; f < n_faces; ++f) {
        if (pos >= tokens.size())
            throw ParseError("OFF: face section shorter than the header count", tokens.back().line);
        const std::int64_t k = parse_int_token(tokens[pos]);
        const int face_line = tokens[pos].line;
        ++pos;
        if (k < 3) throw ParseError("OFF: face with fewer than 3 vertices", face_line);
        std::vector<std::uint32_t> poly;
        poly.reserve(static_cast<std::size_t>(k));
        for (std::int64_t i = 0; i < k; ++i) {
            if (pos >= tokens.size())
                throw ParseError("OFF: truncated face record", tokens.back().line);
            const std::int64_t idx = parse_int_token(tokens[pos]);
            if (idx < 0 || idx >= n_vertices)
                throw ParseError("OFF: vertex index " + std::to_string(idx) + " out of range",
                                 tokens[pos].line);
            poly.push_back(static_cast<std::uint32_t>(idx));
            ++pos;
        }
        for (std::size_t i = 1; i + 1 < poly.size(); ++i) {  // fan triangulation
            const std::array<std::uint32_t, 3> tri{poly[0], poly[i], poly[i + 1]};
            if (triangle_area(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                              mesh.vertices[tri[2]]) > 1e-12) {
                mesh.faces.push_back(tri);
            } else {
                ++mesh.degenerate_dropped;
            }
        }
    }
    if (pos != tokens.size())
        throw ParseError("OFF: trailing data after the declared faces", tokens[pos].line);
    return mesh;
}

std::string serialize_off(const Mesh& mesh) {
    std::ostringstream os;
    os.precision(17);
    os << "OFF\n" << mesh.vertices.size() << " " << mesh.faces.size() << " 0\n";
    for (const auto& v : mesh.vertices) os << v.x() << " " << v.y() << " " << v.z() << "\n";
    for (const auto& f : mesh.faces) os << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
    return os.str();
}

PointCloud sample_mesh_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
    if (mesh.faces.empty()) throw InvalidInputError("sample_mesh_surface: mesh has no triangles");
    std::vector<double> cumulative(mesh.faces.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto& f = mesh.faces[i];
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        cumulative[i] = total;
    }
    if (total <= 0.0) throw InvalidInputError("sample_mesh_surface: zero total area");

    Rng rng = derive_rng(seed, StreamTag::data_gen, 0xFACE);
    PointCloud cloud;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double pick = rng.uniform() * total;
        const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), pick);
        const std::size_t tri =
            std::min(static_cast<std::size_t>(it - cumulative.begin()), mesh.faces.size() - 1);
        double u = rng.uniform();
        double v = rng.uniform();
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        const auto& f = mesh.faces[tri];
        const Vec3& a = mesh.vertices[f[0]];
        cloud.points.push_back(a + u * (mesh.vertices[f[1]] - a) + v * (mesh.vertices[f[2]] - a));
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// .pdsc container
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kPdscVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError(std::string("truncated file while reading ") + what);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const char* what) {
    const auto len = read_pod<std::uint32_t>(is, what);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw FormatError(std::string("truncated file while reading ") + what);
    return s;
}

}  // namespace

void dataset_write(const Dataset& ds, const std::filesystem::path& path) {
    std::uint32_t n_points = 0;
    for (const auto& c : ds.clouds) {
        if (n_points == 0) n_points = static_cast<std::uint32_t>(c.size());
        if (c.size() != n_points)
            throw InvalidInputError("dataset_write: clouds must share one point count");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("dataset_write: cannot open " + path.string());
    os.write("PDSC", 4);
    write_pod<std::uint32_t>(os, kPdscVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.clouds.size()));
    write_pod<std::uint32_t>(os, n_points);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ds.class_names.size()));
    for (const auto& name : ds.class_names) write_string(os, name);
    write_string(os, ds.split);
    write_pod<std::uint64_t>(os, ds.seed);
    for (const auto& c : ds.clouds) {
        write_pod<std::uint32_t>(os, c.label.value_or(0));
        for (const auto& p : c.points) {
            write_pod<float>(os, static_cast<float>(p.x()));
            write_pod<float>(os, static_cast<float>(p.y()));
            write_pod<float>(os, static_cast<float>(p.z()));
        }
    }
    if (!os) throw FormatError("dataset_write: write failed for " + path.string());
}

Dataset dataset_read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("dataset_read: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PDSC", 4) != 0)
        throw FormatError("dataset_read: bad magic in " + path.string());
    const auto version = read_pod<std::uint32_t>(is, "version");
    if (version != kPdscVersion)
        throw FormatError("dataset_read: unsupported version " + std::to_string(version));
    const auto n_clouds = read_pod<std::uint32_t>(is, "cloud count");
    const auto n_points = read_pod<std::uint32_t>(is, "point count");
    const auto n_classes = read_pod<std::uint32_t>(is, "class count");

    Dataset ds;
    ds.class_names.reserve(n_classes);
    for (std::uint32_t i = 0; i < n_classes; ++i)
        ds.class_names.push_back(read_string(is, "class name"));
    ds.split = read_string(is, "split tag");
    ds.seed = read_pod<std::uint64_t>(is, "seed");

    ds.clouds.reserve(n_clouds);
    for (std::uint32_t i = 0; i < n_clouds; ++i) {
        PointCloud c;
        const auto label = read_pod<std::uint32_t>(is, "label");
        if (n_classes > 0 && label >= n_classes)
            throw FormatError("dataset_read: label out of range");
        c.label = label;
        c.id = "cloud_" + std::to_string(i);
        c.points.reserve(n_points);
        for (std::uint32_t p = 0; p < n_points; ++p) {
            const float x = read_pod<float>(is, "point");
            const float y = read_pod<float>(is, "point");
            const float z = read_pod<float>(is, "point");
            c.points.emplace_back(x, y, z);
        }
        ds.clouds.push_back(std::move(c));
    }
    is.peek();
    if (!is.eof()) throw FormatError("dataset_read: trailing bytes in " + path.string());
    return ds;
}

Dataset convert_off_directory(const std::filesystem::path& dir, std::size_t n_points,
                              std::uint64_t seed, const std::string& split) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw InvalidInputError("convert_off_directory: not a directory: " + dir.string());

    std::vector<std::string> class_names;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
    std::sort(class_names.begin(), class_names.end());
    if (class_names.empty())
        throw InvalidInputError("convert_off_directory: no class subdirectories in " +
                                dir.string());

    Dataset ds;
    ds.class_names = class_names;
    ds.split = split;
    ds.seed = seed;
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir / class_names[c]))
            if (entry.path().extension() == ".off") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (std::size_t i = 0; i < files.size(); ++i) {
            std::ifstream in(files[i]);
            std::ostringstream buf;
            buf << in.rdbuf();
            const Mesh mesh = parse_off(buf.str());
            std::uint64_t mesh_seed = seed;
            splitmix64(mesh_seed);
            mesh_seed ^= (c + 1) * 0x9e3779b97f4a7c15ULL + i;
            PointCloud cloud = sample_mesh_surface(mesh, n_points, mesh_seed);
            cloud = normalize_cloud(cloud);
            cloud.label = static_cast<std::uint32_t>(c);
            cloud.id = files[i].stem().string();
            ds.clouds.push_back(std::move(cloud));
        }
    }
    if (ds.clouds.empty())
        throw InvalidInputError("convert_off_directory: no .off files found in " + dir.string());
    return ds;
}

}  // namespace pointdisc
