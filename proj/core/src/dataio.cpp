#include "yolortho/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "yolortho/error.hpp"

namespace yolortho::dataio {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 4> kDefaultDiagnosisNames = {"caries", "deep caries",
                                                                "periapical lesion", "impacted"};

[[noreturn]] void malformed(const std::string& msg) { throw Error(ErrorKind::MalformedFile, msg); }

std::string normalize_name(std::string_view name) {
  std::string out;
  bool pending_space = false;
  for (char ch : name) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || ch == '_' || ch == '-') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return v;
}

// One categories_N table. The smallest declared id is the file's id base.
struct CategoryTable {
  bool present = false;
  int base = 0;
  std::map<int, std::string> names;

  static CategoryTable read(const json& root, const char* key) {
    CategoryTable t;
    if (!root.contains(key)) return t;
    const json& arr = root.at(key);
    if (!arr.is_array() || arr.empty()) malformed(std::string(key) + " must be a non-empty array");
    t.present = true;
    t.base = std::numeric_limits<int>::max();
    for (const json& c : arr) {
      const int id = c.at("id").get<int>();
      t.names[id] = c.value("name", std::to_string(id));
      t.base = std::min(t.base, id);
    }
    return t;
  }

  // Numbered tables (quadrant, position): numeric names win, otherwise the
  // id is offset by the declared base.
  int resolve_number(int id, int lo, int hi, const char* what) const {
    int value = id + 1;  // 0-based when no table is given
    if (present) {
      auto it = names.find(id);
      if (it == names.end()) malformed(std::string(what) + " id " + std::to_string(id) + " not declared");
      if (auto n = parse_int(normalize_name(it->second))) {
        value = *n;
      } else {
        value = id - base + 1;
      }
    }
    if (value < lo || value > hi) {
      malformed(std::string(what) + " id " + std::to_string(id) + " out of range");
    }
    return value;
  }

  Attribute resolve_diagnosis(int id) const {
    std::string name;
    if (present) {
      auto it = names.find(id);
      if (it == names.end()) {
        throw Error(ErrorKind::UnknownCategory, "diagnosis id " + std::to_string(id) + " not declared");
      }
      name = it->second;
    } else {
      if (id < 0 || id >= static_cast<int>(kDefaultDiagnosisNames.size())) {
        throw Error(ErrorKind::UnknownCategory, "diagnosis id " + std::to_string(id) + " out of range");
      }
      name = kDefaultDiagnosisNames[id];
    }
    auto attr = attribute_from_name(name);
    if (!attr) throw Error(ErrorKind::UnknownCategory, "unknown diagnosis '" + name + "'");
    return *attr;
  }
};

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    malformed(std::string("annotation file is not valid JSON: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void tier_mismatch(std::int64_t ann_id, AnnotationTier tier, const std::string& why) {
  throw Error(ErrorKind::TierMismatch, "annotation " + std::to_string(ann_id) + " in " +
                                           std::string(to_string(tier)) + " tier: " + why);
}

// `declared` is the file-level tier; nullopt means each image carries one.
DatasetIndex parse_impl(std::string_view text, std::optional<AnnotationTier> declared) {
  const json root = parse_json(text);
  try {
    if (!root.is_object() || !root.contains("images") || !root.contains("annotations")) {
      malformed("annotation file needs 'images' and 'annotations'");
    }
    const CategoryTable quadrants = CategoryTable::read(root, "categories_1");
    const CategoryTable positions = CategoryTable::read(root, "categories_2");
    const CategoryTable diagnoses = CategoryTable::read(root, "categories_3");

    DatasetIndex index;
    std::map<std::int64_t, std::size_t> image_pos;
    for (const json& im : root.at("images")) {
      ImageEntry e;
      e.image_id = im.at("id").get<std::int64_t>();
      e.file_path = im.value("file_name", std::string{});
      e.width = im.at("width").get<int>();
      e.height = im.at("height").get<int>();
      if (e.width <= 0 || e.height <= 0) malformed("image " + std::to_string(e.image_id) + " has no size");
      if (im.contains("tier")) {
        e.tier = parse_tier(im.at("tier").get<std::string>());
        if (declared && e.tier != *declared) {
          throw Error(ErrorKind::TierMismatch, "image " + std::to_string(e.image_id) +
                                                   " declares tier " + std::string(to_string(e.tier)));
        }
      } else if (declared) {
        e.tier = *declared;
      } else {
        malformed("image " + std::to_string(e.image_id) + " has no tier");
      }
      if (!image_pos.emplace(e.image_id, index.images.size()).second) {
        malformed("duplicate image id " + std::to_string(e.image_id));
      }
      index.records[e.image_id];
      index.images.push_back(std::move(e));
    }

    for (const json& a : root.at("annotations")) {
      const std::int64_t ann_id = a.value("id", std::int64_t{-1});
      const std::int64_t image_id = a.at("image_id").get<std::int64_t>();
      auto pos = image_pos.find(image_id);
      if (pos == image_pos.end()) malformed("annotation references unknown image " + std::to_string(image_id));
      const ImageEntry& img = index.images[pos->second];
      const AnnotationTier tier = img.tier;

      ToothRecord r;
      const json& bbox = a.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4) malformed("bbox must be [x, y, w, h]");
      BoundingBox box = BoundingBox::from_xywh(bbox[0].get<double>(), bbox[1].get<double>(),
                                               bbox[2].get<double>(), bbox[3].get<double>());
      if (a.contains("box_xyxy")) {
        const json& xy = a.at("box_xyxy");
        box = {xy.at(0).get<double>(), xy.at(1).get<double>(), xy.at(2).get<double>(),
               xy.at(3).get<double>()};
      }
      r.box = clip_box(box, img.width, img.height);
      if (!r.box.is_valid()) malformed("annotation " + std::to_string(ann_id) + " has an empty box");

      const char* quadrant_key = a.contains("category_id_1") ? "category_id_1" : "category_id";
      if (!a.contains(quadrant_key)) tier_mismatch(ann_id, tier, "missing quadrant");
      r.quadrant = quadrants.resolve_number(a.at(quadrant_key).get<int>(), 1, 4, "quadrant");

      const bool has_position = a.contains("category_id_2");
      const bool has_diagnosis = a.contains("category_id_3") || a.contains("attributes");
      if (tier == AnnotationTier::Quadrant && (has_position || has_diagnosis)) {
        tier_mismatch(ann_id, tier, "carries enumeration or diagnosis fields");
      }
      if (tier == AnnotationTier::Enumeration && has_diagnosis) {
        tier_mismatch(ann_id, tier, "carries a diagnosis field");
      }
      if (tier != AnnotationTier::Quadrant && !has_position) tier_mismatch(ann_id, tier, "missing position");
      if (tier == AnnotationTier::Disease && !has_diagnosis) tier_mismatch(ann_id, tier, "missing diagnosis");

      if (has_position) {
        const int position = positions.resolve_number(a.at("category_id_2").get<int>(), 1, 8, "position");
        r.fdi = FDILabel(r.quadrant, position);
      }
      if (has_diagnosis) {
        AttributeFlags flags;
        if (a.contains("attributes")) {
          const json& arr = a.at("attributes");
          if (!arr.is_array() || arr.size() != kNumAttributes) malformed("attributes must hold 4 flags");
          for (std::size_t i = 0; i < kNumAttributes; ++i) flags[i] = arr[i].get<bool>();
        } else {
          flags[diagnoses.resolve_diagnosis(a.at("category_id_3").get<int>())] = true;
        }
        r.attributes = flags;
      }
      if (a.value("source", std::string("annotated")) == "pseudo") r.source = RecordSource::Pseudo;
      index.records[image_id].push_back(r);
    }
    return index;
  } catch (const json::exception& e) {
    malformed(std::string("annotation file has an unexpected layout: ") + e.what());
  }
}

}  // namespace

std::string_view to_string(AnnotationTier tier) noexcept {
  switch (tier) {
    case AnnotationTier::Quadrant: return "quadrant";
    case AnnotationTier::Enumeration: return "enumeration";
    case AnnotationTier::Disease: return "disease";
  }
  return "unknown";
}

AnnotationTier parse_tier(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "quadrant") return AnnotationTier::Quadrant;
  if (n == "enumeration") return AnnotationTier::Enumeration;
  if (n == "disease") return AnnotationTier::Disease;
  throw Error(ErrorKind::InvalidTier, "unknown annotation tier '" + std::string(name) + "'");
}

const ImageEntry* DatasetIndex::find_image(std::int64_t id) const {
  for (const auto& e : images)
    if (e.image_id == id) return &e;
  return nullptr;
}

std::size_t DatasetIndex::record_count() const {
  std::size_t n = 0;
  for (const auto& [id, recs] : records) n += recs.size();
  return n;
}

std::optional<Attribute> attribute_from_name(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "impacted") return Attribute::IsImpacted;
  if (n == "caries") return Attribute::HasCaries;
  if (n == "deep caries") return Attribute::HasDeepCaries;
  if (n == "periapical lesion") return Attribute::HasLesion;
  return std::nullopt;
}

DatasetIndex parse_annotations(std::string_view json_text, AnnotationTier tier) {
  return parse_impl(json_text, tier);
}

DatasetIndex import_annotations(const std::filesystem::path& file, AnnotationTier tier) {
  return parse_annotations(read_file(file), tier);
}

DatasetIndex parse_dataset(std::string_view json_text) { return parse_impl(json_text, std::nullopt); }

DatasetIndex import_dataset(const std::filesystem::path& file) { return parse_dataset(read_file(file)); }

std::string export_annotations(const DatasetIndex& index) {
  json root;
  root["images"] = json::array();
  root["annotations"] = json::array();
  for (const auto& e : index.images) {
    root["images"].push_back({{"id", e.image_id},
                              {"file_name", e.file_path},
                              {"width", e.width},
                              {"height", e.height},
                              {"tier", std::string(to_string(e.tier))}});
  }
  std::int64_t ann_id = 0;
  for (const auto& e : index.images) {
    auto it = index.records.find(e.image_id);
    if (it == index.records.end()) continue;
    for (const ToothRecord& r : it->second) {
      json a;
      a["id"] = ann_id++;
      a["image_id"] = e.image_id;
      a["bbox"] = {r.box.x_min, r.box.y_min, r.box.width(), r.box.height()};
      a["box_xyxy"] = {r.box.x_min, r.box.y_min, r.box.x_max, r.box.y_max};
      a["category_id_1"] = r.quadrant - 1;
      if (r.fdi) a["category_id_2"] = r.fdi->position() - 1;
      if (r.attributes) {
        const auto& f = *r.attributes;
        a["attributes"] = {f[0], f[1], f[2], f[3]};
        const int n_true = static_cast<int>(std::count(f.values.begin(), f.values.end(), true));
        if (n_true == 1) {
          // category_id_3 uses the 0=caries, 1=deep caries, 2=lesion, 3=impacted table.
          constexpr std::array<int, 4> kSlotToCategory = {3, 0, 1, 2};
          for (std::size_t i = 0; i < kNumAttributes; ++i)
            if (f[i]) a["category_id_3"] = kSlotToCategory[i];
        }
      }
      if (r.source == RecordSource::Pseudo) a["source"] = "pseudo";
      root["annotations"].push_back(std::move(a));
    }
  }
  json q = json::array(), p = json::array(), d = json::array();
  for (int i = 0; i < 4; ++i) q.push_back({{"id", i}, {"name", std::to_string(i + 1)}});
  for (int i = 0; i < 8; ++i) p.push_back({{"id", i}, {"name", std::to_string(i + 1)}});
  for (int i = 0; i < 4; ++i) d.push_back({{"id", i}, {"name", kDefaultDiagnosisNames[i]}});
  root["categories_1"] = q;
  root["categories_2"] = p;
  root["categories_3"] = d;
  return root.dump(1);
}

void write_annotations(const DatasetIndex& index, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + file.string());
  out << export_annotations(index) << '\n';
}

void append_dataset(DatasetIndex& into, const DatasetIndex& other) {
  for (const auto& e : other.images) {
    if (into.find_image(e.image_id)) {
      throw Error(ErrorKind::InvalidArgument, "image id " + std::to_string(e.image_id) + " appears twice");
    }
    into.images.push_back(e);
    auto it = other.records.find(e.image_id);
    into.records[e.image_id] = it == other.records.end() ? std::vector<ToothRecord>{} : it->second;
  }
}

std::vector<ToothRecord> merge_colocated_boxes(std::span<const ToothRecord> records, double iou_min) {
  if (!(iou_min > 0.0 && iou_min <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "merge iou_min must lie in (0, 1]");
  }
  std::vector<ToothRecord> current(records.begin(), records.end());
  for (;;) {
    const std::size_t n = current.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (box_iou(current[i].box, current[j].box) >= iou_min) {
          const std::size_t a = find(i), b = find(j);
          parent[std::max(a, b)] = std::min(a, b);
        }

    std::vector<ToothRecord> merged;
    std::map<std::size_t, std::size_t> cluster_slot;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t root = find(i);
      auto [it, fresh] = cluster_slot.emplace(root, merged.size());
      if (fresh) {
        merged.push_back(current[i]);
        continue;
      }
      ToothRecord& m = merged[it->second];
      const ToothRecord& r = current[i];
      if (m.fdi != r.fdi || m.quadrant != r.quadrant) {
        throw Error(ErrorKind::ConflictingFDI,
                    "co-located boxes carry different labels (" +
                        (m.fdi ? std::to_string(m.fdi->code()) : "Q" + std::to_string(m.quadrant)) + " vs " +
                        (r.fdi ? std::to_string(r.fdi->code()) : "Q" + std::to_string(r.quadrant)) + ")");
      }
      m.box = box_union(m.box, r.box);
      if (m.attributes || r.attributes) {
        m.attributes = attribute_or(m.attributes.value_or(AttributeFlags{}),
                                    r.attributes.value_or(AttributeFlags{}));
      }
      if (r.source == RecordSource::Annotated) m.source = RecordSource::Annotated;
    }
    if (merged.size() == n) return merged;
    current = std::move(merged);
  }
}

FuseResult fuse_pseudo_labels(std::span<const ToothRecord> annotated, std::span<const Detection> pseudo,
                              double conf_min, double iou_max) {
  FuseResult out;
  out.records.assign(annotated.begin(), annotated.end());
  std::set<int> taken;
  for (const auto& r : annotated)
    if (r.fdi) taken.insert(r.fdi->code());

  std::vector<std::size_t> order(pseudo.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pseudo[a].confidence > pseudo[b].confidence;
  });

  for (std::size_t idx : order) {
    const Detection& d = pseudo[idx];
    if (d.confidence < conf_min) {
      ++out.dropped_low_confidence;
      continue;
    }
    const bool overlaps = std::any_of(annotated.begin(), annotated.end(), [&](const ToothRecord& r) {
      return box_iou(r.box, d.box) >= iou_max;
    });
    if (overlaps) {
      ++out.dropped_overlap;
      continue;
    }
    const FDILabel fdi = fdi_from_class_index(d.argmax_class());
    if (!taken.insert(fdi.code()).second) {
      ++out.dropped_duplicate_fdi;
      continue;
    }
    out.records.push_back(make_record(d.box, fdi, AttributeFlags{}, RecordSource::Pseudo));
    ++out.accepted;
  }
  return out;
}

}  // namespace yolortho::dataio
