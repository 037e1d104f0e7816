#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pointdisc/data.hpp"

using namespace pointdisc;

namespace {

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("sphere surface samples have unit norm before jitter") {
    Rng rng(1);
    const auto pts = sample_class_surface(ShapeClass::sphere, 256, rng);
    for (const auto& p : pts) CHECK(std::abs(p.norm() - 1.0) < 1e-12);
}

TEST_CASE("cube surface samples sit on a face before jitter") {
    Rng rng(2);
    const auto pts = sample_class_surface(ShapeClass::cube, 256, rng);
    for (const auto& p : pts) CHECK(p.cwiseAbs().maxCoeff() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cylinder samples lie on the lateral surface or caps") {
    Rng rng(3);
    const auto pts = sample_class_surface(ShapeClass::cylinder, 512, rng);
    for (const auto& p : pts) {
        const double rad = std::hypot(p.x(), p.y());
        const bool lateral = std::abs(rad - 0.5) < 1e-9 && std::abs(p.z()) <= 0.8 + 1e-9;
        const bool cap = std::abs(std::abs(p.z()) - 0.8) < 1e-9 && rad <= 0.5 + 1e-9;
        CHECK((lateral || cap));
    }
}

TEST_CASE("torus samples satisfy the implicit torus equation") {
    Rng rng(4);
    const auto pts = sample_class_surface(ShapeClass::torus, 512, rng);
    for (const auto& p : pts) {
        const double ring = std::hypot(p.x(), p.y()) - 0.7;
        CHECK(std::abs(std::hypot(ring, p.z()) - 0.25) < 1e-9);
    }
}

TEST_CASE("sphere sample mean shrinks like the CLT bound") {
    Rng rng(5);
    const auto pts = sample_class_surface(ShapeClass::sphere, 2048, rng);
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pts) mean += p;
    mean /= 2048.0;
    CHECK(mean.norm() <= 0.05);
}

TEST_CASE("gen_synthetic is deterministic and normalized") {
    const PointCloud a = gen_synthetic(ShapeClass::torus, 128, 42);
    const PointCloud b = gen_synthetic(ShapeClass::torus, 128, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK((a.points[i] - b.points[i]).norm() == 0.0);
    for (const auto& p : a.points) CHECK(p.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);

    const PointCloud c = gen_synthetic(ShapeClass::torus, 128, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if ((a.points[i] - c.points[i]).norm() > 0) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("parse_off handles the handcrafted corpus") {
    const Mesh m = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    REQUIRE(m.vertices.size() == 3);
    REQUIRE(m.faces.size() == 1);
    CHECK(m.faces[0] == std::array<std::uint32_t, 3>{0, 1, 2});

    // fused header variant
    const Mesh f = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
    CHECK(f.vertices == m.vertices);
    CHECK(f.faces == m.faces);

    // comments and blank lines anywhere
    const Mesh c = parse_off(
        "# a comment\nOFF # trailing comment\n\n3 1 0\n0 0 0\n\n1 0 0\n0 1 0\n# body\n3 0 1 2\n");
    CHECK(c.vertices == m.vertices);
    CHECK(c.faces == m.faces);

    // quad fan-triangulates to (0,1,2), (0,2,3)
    const Mesh q = parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
    REQUIRE(q.faces.size() == 2);
    CHECK(q.faces[0] == std::array<std::uint32_t, 3>{0, 1, 2});
    CHECK(q.faces[1] == std::array<std::uint32_t, 3>{0, 2, 3});
}

TEST_CASE("parse_off reports malformed input with line numbers") {
    // missing header
    try {
        parse_off("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 1);
    }

    // non-numeric vertex on line 4
    try {
        parse_off("OFF\n3 1 0\n0 0 0\nx 0 0\n0 1 0\n3 0 1 2\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 4);
    }

    // body shorter than the header count: failure reported at the truncation point
    try {
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 4);
    }

    // face index out of range
    try {
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 6);
    }
}

TEST_CASE("parse_off of serialize_off is the identity") {
    Mesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0.25, 0.25, 1.5)};
    m.faces = {{0, 1, 2}, {0, 1, 3}, {1, 2, 3}};
    const Mesh back = parse_off(serialize_off(m));
    CHECK(back.vertices == m.vertices);
    CHECK(back.faces == m.faces);
}

TEST_CASE("degenerate triangles are dropped with a tally") {
    const Mesh m = parse_off("OFF\n3 2 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n3 0 0 1\n");
    CHECK(m.faces.size() == 1);
    CHECK(m.degenerate_dropped == 1);
}

TEST_CASE("sample_mesh_surface stays on a single triangle and matches its centroid") {
    Mesh tri;
    tri.vertices = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0)};
    tri.faces = {{0, 1, 2}};
    const PointCloud pc = sample_mesh_surface(tri, 10000, 7);
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pc.points) {
        // inside the triangle: nonnegative barycentric coordinates summing to <= 1
        const double u = p.x() / 2.0, v = p.y() / 2.0;
        CHECK(u >= -1e-12);
        CHECK(v >= -1e-12);
        CHECK(u + v <= 1.0 + 1e-12);
        CHECK(std::abs(p.z()) < 1e-12);
        mean += p;
    }
    mean /= 10000.0;
    const Vec3 centroid(2.0 / 3.0, 2.0 / 3.0, 0.0);
    // CLT: sd of each coordinate ~ 0.47/sqrt(n)
    CHECK((mean - centroid).norm() < 0.03);
}

TEST_CASE("sample_mesh_surface splits equal-area triangles evenly") {
    Mesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(10, 0, 0),
                  Vec3(11, 0, 0), Vec3(10, 1, 0)};
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    const PointCloud pc = sample_mesh_surface(m, 10000, 9);
    std::size_t left = 0;
    for (const auto& p : pc.points)
        if (p.x() < 5.0) ++left;
    // binomial(10000, 1/2): 3 sigma = 150
    CHECK(left >= 5000 - 150);
    CHECK(left <= 5000 + 150);
}

TEST_CASE("per-triangle sample counts converge to area proportions") {
    // areas 0.5, 1.0, 1.5 -> probabilities 1/6, 2/6, 3/6
    Mesh m;
    m.vertices = {Vec3(0, 0, 0),  Vec3(1, 0, 0),  Vec3(0, 1, 0),
                  Vec3(10, 0, 0), Vec3(12, 0, 0), Vec3(10, 1, 0),
                  Vec3(20, 0, 0), Vec3(23, 0, 0), Vec3(20, 1, 0)};
    m.faces = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
    const std::size_t n = 100000;
    const PointCloud pc = sample_mesh_surface(m, n, 13);
    std::array<std::size_t, 3> counts{};
    for (const auto& p : pc.points) {
        if (p.x() < 5.0) ++counts[0];
        else if (p.x() < 15.0) ++counts[1];
        else ++counts[2];
    }
    const double expect[] = {n / 6.0, n / 3.0, n / 2.0};
    double chi2 = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = static_cast<double>(counts[i]) - expect[i];
        chi2 += d * d / expect[i];
    }
    // chi-square with 2 dof: 99.9th percentile ~ 13.8
    CHECK(chi2 < 13.8);
}

TEST_CASE("pdsc roundtrip preserves the dataset at float32 precision") {
    Dataset ds = gen_synthetic_dataset(3, 32, 11, "val");
    const auto path = temp_file("pointdisc_test_roundtrip.pdsc");
    dataset_write(ds, path);
    const Dataset back = dataset_read(path);

    CHECK(back.class_names == ds.class_names);
    CHECK(back.split == ds.split);
    CHECK(back.seed == ds.seed);
    REQUIRE(back.clouds.size() == ds.clouds.size());
    for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
        CHECK(back.clouds[i].label == ds.clouds[i].label);
        REQUIRE(back.clouds[i].size() == ds.clouds[i].size());
        for (std::size_t p = 0; p < ds.clouds[i].size(); ++p)
            for (int k = 0; k < 3; ++k)
                CHECK(back.clouds[i].points[p][k] ==
                      static_cast<double>(static_cast<float>(ds.clouds[i].points[p][k])));
    }

    // a second write of the read-back dataset is byte-identical
    const auto path2 = temp_file("pointdisc_test_roundtrip2.pdsc");
    dataset_write(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("pdsc rejects corrupted magic and truncation; empty dataset roundtrips") {
    Dataset ds = gen_synthetic_dataset(1, 16, 3, "test");
    const auto path = temp_file("pointdisc_test_corrupt.pdsc");
    dataset_write(ds, path);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(dataset_read(path), FormatError);

    dataset_write(ds, path);
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 5);
    CHECK_THROWS_AS(dataset_read(path), FormatError);
    std::filesystem::remove(path);

    Dataset empty;
    empty.class_names = shape_class_names();
    empty.split = "train";
    const auto epath = temp_file("pointdisc_test_empty.pdsc");
    dataset_write(empty, epath);
    const Dataset eback = dataset_read(epath);
    CHECK(eback.clouds.empty());
    CHECK(eback.class_names == empty.class_names);
    std::filesystem::remove(epath);
}

TEST_CASE("convert_off_directory samples labelled clouds from class subdirectories") {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "pointdisc_off_corpus";
    fs::remove_all(root);
    fs::create_directories(root / "alpha");
    fs::create_directories(root / "beta");
    const char* tri = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
    std::ofstream(root / "alpha" / "a0.off") << tri;
    std::ofstream(root / "beta" / "b0.off") << tri;
    std::ofstream(root / "beta" / "b1.off") << tri;

    const Dataset ds = convert_off_directory(root, 64, 5, "train");
    CHECK(ds.class_names == std::vector<std::string>{"alpha", "beta"});
    REQUIRE(ds.clouds.size() == 3);
    CHECK(ds.clouds[0].label == 0);
    CHECK(ds.clouds[1].label == 1);
    CHECK(ds.clouds[2].label == 1);
    for (const auto& c : ds.clouds) CHECK(c.size() == 64);
    fs::remove_all(root);
}
