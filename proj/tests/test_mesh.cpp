#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <set>

#include "vpl/mesh.hpp"

using namespace vpl;

TEST_CASE("cube template has 1352 shared vertices and 2700 triangles") {
  auto tmpl = make_cube_template();
  CHECK(tmpl.mesh.vertices.size() == 1352);
  CHECK(tmpl.mesh.faces.size() == 6 * 15 * 15 * 2);
  tmpl.mesh.validate();

  // 6*16*16 raw grid slots collapse onto 1352 distinct global indices
  std::set<int> distinct;
  int raw = 0;
  for (const auto& face : tmpl.grid_index)
    for (int idx : face) {
      distinct.insert(idx);
      ++raw;
    }
  CHECK(raw == 6 * 16 * 16);
  CHECK(distinct.size() == 1352);
}

TEST_CASE("cube template is deterministic") {
  auto a = make_cube_template();
  auto b = make_cube_template();
  REQUIRE(a.mesh.vertices.size() == b.mesh.vertices.size());
  for (std::size_t i = 0; i < a.mesh.vertices.size(); ++i) {
    CHECK(a.mesh.vertices[i].x == b.mesh.vertices[i].x);
    CHECK(a.mesh.vertices[i].y == b.mesh.vertices[i].y);
    CHECK(a.mesh.vertices[i].z == b.mesh.vertices[i].z);
  }
  CHECK(a.mesh.faces == b.mesh.faces);
}

TEST_CASE("cube template volume is 1") {
  auto tmpl = make_cube_template();
  CHECK(signed_volume(tmpl.mesh) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("signed volume scales as s^3 and flips with winding") {
  auto tmpl = make_cube_template();
  Mesh scaled = tmpl.mesh;
  for (auto& v : scaled.vertices) v = v * 2.0;
  CHECK(signed_volume(scaled) == doctest::Approx(8.0).epsilon(1e-9));

  Mesh reversed = tmpl.mesh;
  for (auto& f : reversed.faces) std::swap(f[1], f[2]);
  CHECK(signed_volume(reversed) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("signed volume invariant under face permutation") {
  auto tmpl = make_cube_template();
  Mesh shuffled = tmpl.mesh;
  std::reverse(shuffled.faces.begin(), shuffled.faces.end());
  CHECK(signed_volume(shuffled) ==
        doctest::Approx(signed_volume(tmpl.mesh)).epsilon(1e-12));
}

TEST_CASE("face_normal basics") {
  Vec3 n = face_normal({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
  CHECK(n.x == doctest::Approx(0));
  CHECK(n.y == doctest::Approx(0));
  CHECK(n.z == doctest::Approx(1));

  // scale invariance of direction
  Vec3 n2 = face_normal({0, 0, 0}, {2, 0, 0}, {0, 2, 0});
  CHECK(n2.z == doctest::Approx(1));

  // reversed winding negates
  Vec3 n3 = face_normal({0, 0, 0}, {0, 1, 0}, {1, 0, 0});
  CHECK(n3.z == doctest::Approx(-1));

  CHECK_THROWS_AS(face_normal({0, 0, 0}, {1, 0, 0}, {2, 0, 0}, 7), Error);
}

TEST_CASE("symmetrize on the template is the identity") {
  auto tmpl = make_cube_template();
  Mesh s = symmetrize(tmpl.mesh, 0);
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    CHECK(s.vertices[i].x == doctest::Approx(tmpl.mesh.vertices[i].x));
    CHECK(s.vertices[i].y == doctest::Approx(tmpl.mesh.vertices[i].y));
    CHECK(s.vertices[i].z == doctest::Approx(tmpl.mesh.vertices[i].z));
  }
}

TEST_CASE("symmetrize copies perturbation to the mirror partner") {
  auto tmpl = make_cube_template();
  auto pairing = mirror_pairing(tmpl.mesh.vertices, 0);

  // find an off-plane vertex and perturb it
  int i = -1;
  for (std::size_t k = 0; k < tmpl.mesh.vertices.size(); ++k)
    if (tmpl.mesh.vertices[k].x > 0.4 && pairing[k] != int(k) &&
        int(k) < pairing[k]) {
      i = int(k);
      break;
    }
  REQUIRE(i >= 0);
  int j = pairing[i];

  Mesh m = tmpl.mesh;
  m.vertices[i] += Vec3{0.1, 0.05, -0.02};
  Mesh s = symmetrize(m, 0, pairing);
  CHECK(s.vertices[j].x == doctest::Approx(-s.vertices[i].x));
  CHECK(s.vertices[j].y == doctest::Approx(s.vertices[i].y));
  CHECK(s.vertices[j].z == doctest::Approx(s.vertices[i].z));

  // idempotence, vertex count and topology preserved
  Mesh s2 = symmetrize(s, 0, pairing);
  CHECK(s2.vertices.size() == s.vertices.size());
  CHECK(s2.faces == s.faces);
  for (std::size_t k = 0; k < s.vertices.size(); ++k) {
    CHECK(s2.vertices[k].x == s.vertices[k].x);
    CHECK(s2.vertices[k].y == s.vertices[k].y);
    CHECK(s2.vertices[k].z == s.vertices[k].z);
  }
}

TEST_CASE("symmetrize reports layouts without a mirror pairing") {
  Mesh m;
  m.vertices = {{0.3, 0, 0}, {0.1, 0.7, 0}, {0.2, 0.1, 0.9}};
  m.faces = {{0, 1, 2}};
  CHECK_THROWS_AS(symmetrize(m, 0), Error);
}

TEST_CASE("obj round trip") {
  auto tmpl = make_cube_template();
  auto path = std::filesystem::temp_directory_path() / "vpl_test_cube.obj";
  save_obj(path.string(), tmpl.mesh);
  Mesh back = load_obj(path.string());
  REQUIRE(back.vertices.size() == tmpl.mesh.vertices.size());
  CHECK(back.faces == tmpl.mesh.faces);
  CHECK(signed_volume(back) == doctest::Approx(1.0).epsilon(1e-9));
  std::filesystem::remove(path);
}

TEST_CASE("mesh validation catches bad faces and textures") {
  Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 3}};
  CHECK_THROWS_AS(m.validate(), Error);
  m.faces = {{0, 1, 1}};
  CHECK_THROWS_AS(m.validate(), Error);
  m.faces = {{0, 1, 2}};
  m.texture.assign(5, TextureGrid(4));
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("texture png round trip") {
  auto tmpl = make_cube_template(8);
  Rng rng(7);
  for (auto& g : tmpl.mesh.texture)
    for (auto& t : g.texels) t = std::floor(rng.uniform() * 255.0) / 255.0;
  auto dir = std::filesystem::temp_directory_path() / "vpl_test_tex";
  std::filesystem::create_directories(dir);
  save_textures(dir.string(), tmpl.mesh);

  Mesh back = tmpl.mesh;
  back.texture.clear();
  load_textures(dir.string(), back);
  REQUIRE(back.texture.size() == 6);
  for (int f = 0; f < 6; ++f)
    for (std::size_t i = 0; i < back.texture[f].texels.size(); ++i)
      CHECK(back.texture[f].texels[i] ==
            doctest::Approx(tmpl.mesh.texture[f].texels[i]).epsilon(1e-6));
  std::filesystem::remove_all(dir);
}

TEST_CASE("viewpoint normalization and validation") {
  auto v = Viewpoint::make(-30, 10, 2);
  CHECK(v.azimuth == doctest::Approx(330));
  CHECK_THROWS_AS(Viewpoint::make(0, 0, 0), Error);
  CHECK_THROWS_AS(Viewpoint::make(0, 95, 1), Error);
}
