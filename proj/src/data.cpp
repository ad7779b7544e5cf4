#include "vpl/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vpl/image.hpp"
#include "vpl/renderer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vpl::data {

std::vector<Viewpoint> Dataset::viewpoints() const {
  std::vector<Viewpoint> out;
  for (const auto& o : objects)
    for (const auto& v : o.views) out.push_back(v.viewpoint);
  return out;
}

void Dataset::validate() const {
  if (objects.empty()) throw Error("dataset: no objects");
  for (const auto& o : objects) {
    if (int(o.views.size()) != n_views)
      throw Error("dataset: object " + o.id + " has " +
                  std::to_string(o.views.size()) + " views, expected " +
                  std::to_string(n_views));
    if (o.class_label < 0 || o.class_label >= int(class_names.size()))
      throw Error("dataset: object " + o.id + " has out-of-range class label");
    for (const auto& v : o.views) {
      if (v.image.shape != std::vector<int>{3, image_size, image_size})
        throw Error("dataset: object " + o.id + " image shape " +
                    v.image.shape_str() + " does not match size " +
                    std::to_string(image_size));
      if (v.silhouette.shape != std::vector<int>{image_size, image_size})
        throw Error("dataset: object " + o.id + " silhouette shape mismatch");
      if (v.viewpoint.distance <= 0)
        throw Error("dataset: object " + o.id + " has non-positive distance");
    }
  }
}

// ------------------------------------------------------------------ loading

namespace {

Viewpoint viewpoint_from_json(const json& jv, const std::string& where) {
  for (const char* key : {"azimuth", "elevation", "distance"})
    if (!jv.contains(key) || !jv[key].is_number())
      throw Error(where + ": view entry missing numeric field '" + key + "'");
  try {
    return Viewpoint::make(jv["azimuth"].get<double>(),
                           jv["elevation"].get<double>(),
                           jv["distance"].get<double>());
  } catch (const std::exception& e) {
    throw Error(where + ": " + e.what());
  }
}

}  // namespace

Dataset load_dataset(const std::string& root) {
  const fs::path base(root);
  const fs::path manifest_path = base / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw Error("load_dataset: cannot open " + manifest_path.string());
  json m;
  try {
    in >> m;
  } catch (const std::exception& e) {
    throw Error("load_dataset: malformed " + manifest_path.string() + ": " +
                e.what());
  }
  for (const char* key : {"image_size", "classes", "objects"})
    if (!m.contains(key))
      throw Error("load_dataset: " + manifest_path.string() +
                  " missing field '" + std::string(key) + "'");

  Dataset ds;
  ds.image_size = m["image_size"].get<int>();
  ds.class_names = m["classes"].get<std::vector<std::string>>();
  if (ds.image_size <= 0)
    throw Error("load_dataset: non-positive image_size in " +
                manifest_path.string());

  ds.n_views = -1;
  for (const auto& jo : m["objects"]) {
    Object obj;
    obj.id = jo.at("id").get<std::string>();
    const std::string where = manifest_path.string() + " object " + obj.id;
    const std::string cls = jo.at("class").get<std::string>();
    auto it = std::find(ds.class_names.begin(), ds.class_names.end(), cls);
    if (it == ds.class_names.end())
      throw Error(where + ": unknown class '" + cls + "'");
    obj.class_label = int(it - ds.class_names.begin());

    const auto& views = jo.at("views");
    if (ds.n_views < 0) ds.n_views = int(views.size());
    if (int(views.size()) != ds.n_views)
      throw Error(where + ": has " + std::to_string(views.size()) +
                  " views, expected " + std::to_string(ds.n_views));

    const fs::path obj_dir = base / "objects" / obj.id;
    for (int k = 0; k < int(views.size()); ++k) {
      ViewSample s;
      s.object_id = obj.id;
      s.class_label = obj.class_label;
      s.viewpoint = viewpoint_from_json(views[std::size_t(k)],
                                        where + " view " + std::to_string(k));
      const fs::path png = obj_dir / ("view_" + std::to_string(k) + ".png");
      ImageU8 img;
      try {
        img = read_png(png.string());
      } catch (const std::exception& e) {
        throw Error("load_dataset: " + png.string() + ": " + e.what());
      }
      if (img.channels != 4)
        throw Error("load_dataset: " + png.string() + ": expected RGBA, got " +
                    std::to_string(img.channels) + " channels");
      if (img.width != ds.image_size || img.height != ds.image_size)
        throw Error("load_dataset: " + png.string() + ": size " +
                    std::to_string(img.width) + "x" +
                    std::to_string(img.height) + " does not match manifest " +
                    std::to_string(ds.image_size));
      s.image = Tensor({3, ds.image_size, ds.image_size});
      s.silhouette = Tensor({ds.image_size, ds.image_size});
      for (int y = 0; y < ds.image_size; ++y)
        for (int x = 0; x < ds.image_size; ++x) {
          for (int c = 0; c < 3; ++c)
            s.image.data[(std::size_t(c) * ds.image_size + y) * ds.image_size +
                         x] = from_u8(img.at(x, y, c));
          s.silhouette.data[std::size_t(y) * ds.image_size + x] =
              from_u8(img.at(x, y, 3));
        }
      obj.views.push_back(std::move(s));
    }
    const fs::path mesh_path = obj_dir / "mesh.obj";
    if (fs::exists(mesh_path)) obj.gt_mesh = load_obj(mesh_path.string());
    ds.objects.push_back(std::move(obj));
  }
  ds.validate();
  return ds;
}

// --------------------------------------------------------------- primitives

namespace {

void add_quad(Mesh& m, int a, int b, int c, int d) {
  m.faces.push_back({a, b, c});
  m.faces.push_back({a, c, d});
}

Mesh make_box(Rng& rng) {
  const double hx = rng.uniform(0.18, 0.42);
  const double hy = rng.uniform(0.18, 0.42);
  const double hz = rng.uniform(0.18, 0.42);
  Mesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back({(i & 1) ? hx : -hx, (i & 2) ? hy : -hy,
                          (i & 4) ? hz : -hz});
  add_quad(m, 0, 2, 3, 1);  // -z
  add_quad(m, 4, 5, 7, 6);  // +z
  add_quad(m, 0, 1, 5, 4);  // -y
  add_quad(m, 2, 6, 7, 3);  // +y
  add_quad(m, 0, 4, 6, 2);  // -x
  add_quad(m, 1, 3, 7, 5);  // +x
  return m;
}

Mesh make_ellipsoid(Rng& rng) {
  const double rx = rng.uniform(0.2, 0.42);
  const double ry = rng.uniform(0.2, 0.42);
  const double rz = rng.uniform(0.2, 0.42);
  const int stacks = 12, slices = 16;
  Mesh m;
  m.vertices.push_back({0, ry, 0});   // north pole
  m.vertices.push_back({0, -ry, 0});  // south pole
  // ring vertices: stacks-1 rings of `slices` vertices
  for (int j = 1; j < stacks; ++j) {
    const double phi = M_PI * j / stacks;  // from +y pole
    for (int i = 0; i < slices; ++i) {
      const double th = 2 * M_PI * i / slices;
      m.vertices.push_back({rx * std::sin(phi) * std::cos(th),
                            ry * std::cos(phi),
                            rz * std::sin(phi) * std::sin(th)});
    }
  }
  auto ring = [&](int j, int i) { return 2 + (j - 1) * slices + (i % slices); };
  for (int i = 0; i < slices; ++i) {
    m.faces.push_back({0, ring(1, i + 1), ring(1, i)});
    m.faces.push_back({1, ring(stacks - 1, i), ring(stacks - 1, i + 1)});
  }
  for (int j = 1; j < stacks - 1; ++j)
    for (int i = 0; i < slices; ++i)
      add_quad(m, ring(j, i), ring(j, i + 1), ring(j + 1, i + 1),
               ring(j + 1, i));
  return m;
}

Mesh make_cylinder(Rng& rng) {
  const double r = rng.uniform(0.15, 0.35);
  const double h = rng.uniform(0.2, 0.45);  // half height, axis = y
  const int n = 24;
  Mesh m;
  m.vertices.push_back({0, h, 0});
  m.vertices.push_back({0, -h, 0});
  for (int i = 0; i < n; ++i) {
    const double th = 2 * M_PI * i / n;
    m.vertices.push_back({r * std::cos(th), h, r * std::sin(th)});
    m.vertices.push_back({r * std::cos(th), -h, r * std::sin(th)});
  }
  auto top = [&](int i) { return 2 + 2 * (i % n); };
  auto bot = [&](int i) { return 3 + 2 * (i % n); };
  for (int i = 0; i < n; ++i) {
    m.faces.push_back({0, top(i), top(i + 1)});
    m.faces.push_back({1, bot(i + 1), bot(i)});
    add_quad(m, top(i + 1), top(i), bot(i), bot(i + 1));
  }
  return m;
}

Mesh make_cone(Rng& rng) {
  const double r = rng.uniform(0.2, 0.4);
  const double h = rng.uniform(0.25, 0.45);  // half height, apex at +y
  const int n = 24;
  Mesh m;
  m.vertices.push_back({0, h, 0});   // apex
  m.vertices.push_back({0, -h, 0});  // base center
  for (int i = 0; i < n; ++i) {
    const double th = 2 * M_PI * i / n;
    m.vertices.push_back({r * std::cos(th), -h, r * std::sin(th)});
  }
  auto base = [&](int i) { return 2 + (i % n); };
  for (int i = 0; i < n; ++i) {
    m.faces.push_back({0, base(i), base(i + 1)});
    m.faces.push_back({1, base(i + 1), base(i)});
  }
  return m;
}

// L cross-section in the (y,z) plane, extruded along x; symmetric about x=0.
Mesh make_lshape(Rng& rng) {
  const double hx = rng.uniform(0.18, 0.4);
  const double a = rng.uniform(0.5, 0.85);  // full y extent of the base arm
  const double d = rng.uniform(0.5, 0.85);  // full z extent of the other arm
  const double b = rng.uniform(0.35, 0.6) * d;
  const double c = rng.uniform(0.35, 0.6) * a;
  // polygon corners, counter-clockwise as seen from +x
  const double ys[6] = {0, a, a, c, c, 0};
  const double zs[6] = {0, 0, b, b, d, d};
  Mesh m;
  for (int side = 0; side < 2; ++side) {
    const double x = side ? hx : -hx;
    for (int i = 0; i < 6; ++i)
      m.vertices.push_back({x, ys[i] - a / 2, zs[i] - d / 2});
  }
  auto lo = [&](int i) { return i % 6; };
  auto hi = [&](int i) { return 6 + i % 6; };
  // the polygon is star-shaped from corner 0: fan triangulation is valid
  for (int i = 1; i < 5; ++i) {
    m.faces.push_back({lo(0), lo(i + 1), lo(i)});  // -x cap, outward = -x
    m.faces.push_back({hi(0), hi(i), hi(i + 1)});  // +x cap, outward = +x
  }
  for (int i = 0; i < 6; ++i) add_quad(m, lo(i), lo(i + 1), hi(i + 1), hi(i));
  return m;
}

}  // namespace

Mesh make_primitive(const std::string& cls, Rng& rng) {
  Mesh m;
  if (cls == "box")
    m = make_box(rng);
  else if (cls == "ellipsoid")
    m = make_ellipsoid(rng);
  else if (cls == "cylinder")
    m = make_cylinder(rng);
  else if (cls == "cone")
    m = make_cone(rng);
  else if (cls == "lshape")
    m = make_lshape(rng);
  else
    throw Error("make_primitive: unknown class '" + cls + "'");
  if (signed_volume(m) < 0)
    for (auto& f : m.faces) std::swap(f[1], f[2]);
  m.validate();
  return m;
}

Dataset synth_primitives(const std::string& out_root,
                         const SynthOptions& opts) {
  if (opts.n_views < 1) throw Error("synth_primitives: n_views must be >= 1");
  if (opts.classes.empty()) throw Error("synth_primitives: no classes given");
  for (const auto& c : opts.classes) {
    Rng probe(0);
    make_primitive(c, probe);  // validates the class name up front
  }
  if (opts.first_view_az_min < 0 || opts.first_view_az_max > 360 ||
      opts.first_view_az_min >= opts.first_view_az_max)
    throw Error(
        "synth_primitives: first-view azimuth band must satisfy "
        "0 <= min < max <= 360");

  const fs::path base(out_root);
  fs::create_directories(base / "objects");

  Rng rng(opts.seed);
  json manifest;
  manifest["image_size"] = opts.size;
  manifest["classes"] = opts.classes;
  manifest["objects"] = json::array();

  for (int oi = 0; oi < opts.n_objects; ++oi) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "obj_%04d", oi);
    const std::string id = idbuf;
    const int label = int(rng.next_below(std::uint64_t(opts.classes.size())));
    Rng shape_rng = rng.fork(0x5A00 + std::uint64_t(oi));
    Mesh mesh = make_primitive(opts.classes[std::size_t(label)], shape_rng);

    RasterSettings rs;
    for (int c = 0; c < 3; ++c)
      rs.face_color[std::size_t(c)] = rng.uniform(0.15, 0.85);

    const fs::path obj_dir = base / "objects" / id;
    fs::create_directories(obj_dir);
    save_obj((obj_dir / "mesh.obj").string(), mesh);

    json jo;
    jo["id"] = id;
    jo["class"] = opts.classes[std::size_t(label)];
    jo["views"] = json::array();
    for (int k = 0; k < opts.n_views; ++k) {
      const double az = k == 0 ? rng.uniform(opts.first_view_az_min,
                                             opts.first_view_az_max)
                               : rng.uniform(0.0, 360.0);
      const double el = rng.uniform(-20.0, 30.0);
      const Viewpoint vp = Viewpoint::make(az, el, opts.distance);
      const Camera cam = Camera::make(vp, opts.fov_deg, opts.size);
      const RenderOutput out = rasterize(mesh, cam, rs);

      ImageU8 img(opts.size, opts.size, 4);
      for (int y = 0; y < opts.size; ++y)
        for (int x = 0; x < opts.size; ++x) {
          for (int c = 0; c < 3; ++c)
            img.at(x, y, c) = to_u8(out.color_at(x, y, c));
          img.at(x, y, 3) = to_u8(out.alpha[std::size_t(out.pix(x, y))]);
        }
      write_png((obj_dir / ("view_" + std::to_string(k) + ".png")).string(),
                img);
      jo["views"].push_back({{"azimuth", vp.azimuth},
                             {"elevation", vp.elevation},
                             {"distance", vp.distance}});
    }
    manifest["objects"].push_back(std::move(jo));
  }

  std::ofstream out(base / "manifest.json");
  if (!out)
    throw Error("synth_primitives: cannot write " +
                (base / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  out.close();
  return load_dataset(out_root);
}

// ------------------------------------------------------------- augmentation

ViewSample augment(const ViewSample& s, Rng& rng) {
  const bool chan_flip = rng.uniform() < 0.5;
  const bool mirror = rng.uniform() < 0.5;
  ViewSample out = s;
  const int h = s.silhouette.shape[0], w = s.silhouette.shape[1];
  if (chan_flip) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        std::swap(out.image.data[(0 * std::size_t(h) + y) * w + x],
                  out.image.data[(2 * std::size_t(h) + y) * w + x]);
  }
  if (mirror) {
    ViewSample flipped = out;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c)
          flipped.image.data[(std::size_t(c) * h + y) * w + x] =
              out.image.data[(std::size_t(c) * h + y) * w + (w - 1 - x)];
        flipped.silhouette.data[std::size_t(y) * w + x] =
            out.silhouette.data[std::size_t(y) * w + (w - 1 - x)];
      }
    flipped.viewpoint = Viewpoint::make(360.0 - out.viewpoint.azimuth,
                                        out.viewpoint.elevation,
                                        out.viewpoint.distance);
    out = std::move(flipped);
  }
  return out;
}

// ----------------------------------------------------------------- sampling

void assign_designated_views(Dataset& ds, Rng& rng) {
  for (auto& o : ds.objects)
    o.designated_view = int(rng.next_below(std::uint64_t(ds.n_views)));
}

std::vector<ViewSample> sample_single_view_batch(const Dataset& ds, int batch,
                                                 Rng& rng) {
  std::vector<ViewSample> out;
  for (int i = 0; i < batch; ++i) {
    const Object& o =
        ds.objects[rng.next_below(std::uint64_t(ds.objects.size()))];
    if (o.designated_view < 0)
      throw Error("sample_single_view_batch: designated views not assigned");
    out.push_back(o.views[std::size_t(o.designated_view)]);
  }
  return out;
}

std::vector<ViewPair> sample_multi_view_batch(const Dataset& ds, int batch,
                                              Rng& rng) {
  if (ds.n_views < 2)
    throw Error("sample_multi_view_batch: dataset has a single view per "
                "object; need at least 2");
  std::vector<ViewPair> out;
  for (int i = 0; i < batch; ++i) {
    const Object& o =
        ds.objects[rng.next_below(std::uint64_t(ds.objects.size()))];
    const int a = int(rng.next_below(std::uint64_t(ds.n_views)));
    int b = int(rng.next_below(std::uint64_t(ds.n_views - 1)));
    if (b >= a) ++b;
    out.push_back({o.views[std::size_t(a)], o.views[std::size_t(b)]});
  }
  return out;
}

Viewpoint sample_unobserved_viewpoint(const Dataset& ds,
                                      const Viewpoint& observed, Rng& rng) {
  const std::vector<Viewpoint> vps = ds.viewpoints();
  if (vps.size() < 2)
    throw Error("sample_unobserved_viewpoint: viewpoint set has fewer than "
                "2 elements");
  bool any_other = false;
  for (const auto& v : vps)
    if (!(v == observed)) {
      any_other = true;
      break;
    }
  if (!any_other)
    throw Error("sample_unobserved_viewpoint: every viewpoint equals the "
                "observed one");
  for (;;) {
    const Viewpoint& v = vps[rng.next_below(std::uint64_t(vps.size()))];
    if (!(v == observed)) return v;
  }
}

}  // namespace vpl::data
