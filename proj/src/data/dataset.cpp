#include "cropsim/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <opencv2/imgcodecs.hpp>

#include "json.hpp"

namespace cropsim::data {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Parses one label line into a box; on failure returns a finding.
std::optional<Finding> parse_line(std::string_view line, const std::string& file,
                                  int lineno, BBox* out) {
  const auto tok = split_ws(line);
  if (tok.size() != 5)
    return Finding{file, lineno, "parse", fmt::format("expected 5 fields, got {}", tok.size())};
  long cls = 0;
  {
    auto [p, ec] = std::from_chars(tok[0].data(), tok[0].data() + tok[0].size(), cls);
    if (ec != std::errc() || p != tok[0].data() + tok[0].size())
      return Finding{file, lineno, "class", fmt::format("class id '{}' is not an integer", tok[0])};
    if (cls != 0)
      return Finding{file, lineno, "class", fmt::format("class id {} but dataset is single-class", cls)};
  }
  double v[4];
  for (int k = 0; k < 4; ++k) {
    const auto t = tok[k + 1];
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v[k]);
    if (ec != std::errc() || p != t.data() + t.size())
      return Finding{file, lineno, "parse", fmt::format("'{}' is not a number", t)};
    if (!(v[k] >= 0 && v[k] <= 1))
      return Finding{file, lineno, "range", fmt::format("value {} outside [0,1]", t)};
  }
  *out = BBox{v[0], v[1], v[2], v[3]};
  if (auto why = describe_invalid(*out); !why.empty())
    return Finding{file, lineno, "range", why};
  return std::nullopt;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

}  // namespace

fs::path DatasetManifest::image_path(const ManifestEntry& e) const {
  return root / "images" / (e.stem + ".png");
}

fs::path DatasetManifest::label_path(const ManifestEntry& e) const {
  return root / "labels" / (e.stem + ".txt");
}

std::string format_label_line(const BBox& b) {
  return fmt::format("0 {} {} {} {}", shortest(b.cx), shortest(b.cy), shortest(b.w), shortest(b.h));
}

void write_label_file(const fs::path& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& b : boxes) out << format_label_line(b) << '\n';
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::vector<BBox> parse_label_file(const fs::path& path) {
  const auto text = read_file(path);
  std::vector<BBox> boxes;
  int lineno = 0;
  for (const auto& line : lines_of(text)) {
    ++lineno;
    if (blank(line)) continue;
    BBox b;
    if (auto f = parse_line(line, path.string(), lineno, &b))
      throw ValidationError(fmt::format("{}:{}: {}", f->file, f->line, f->message));
    boxes.push_back(b);
  }
  return boxes;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

std::string compute_content_hash(const DatasetManifest& m) {
  std::string buf;
  for (const auto& e : m.entries) {
    buf += e.stem;
    buf += '\n';
    buf += std::string(synth::to_string(e.domain));
    buf += '\n';
    buf += read_file(m.label_path(e));
    buf += '\0';
  }
  return sha256_hex(buf);
}

void save_manifest(const DatasetManifest& m) {
  json j;
  j["version"] = kManifestVersion;
  j["content_hash"] = m.content_hash;
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je{{"stem", e.stem}, {"seed", e.seed}, {"domain", synth::to_string(e.domain)}};
    if (e.row) je["row"] = {{"angle_deg", e.row->angle_deg}, {"offset_px", e.row->offset_px}};
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  const auto path = m.root / "manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << j.dump(1) << '\n';
}

DatasetManifest load_manifest(const fs::path& root) {
  const auto path = root / "manifest.json";
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (j.value("version", 0) != kManifestVersion)
    throw ValidationError(fmt::format("{}: unsupported manifest version", path.string()));
  DatasetManifest m;
  m.root = root;
  m.content_hash = j.value("content_hash", "");
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.stem = je.at("stem").get<std::string>();
    e.seed = je.at("seed").get<std::uint64_t>();
    const auto d = synth::parse_domain(je.at("domain").get<std::string>());
    if (!d) throw ValidationError(fmt::format("{}: bad domain for {}", path.string(), e.stem));
    e.domain = *d;
    if (je.contains("row"))
      e.row = RowTruth{je["row"].at("angle_deg").get<double>(), je["row"].at("offset_px").get<double>()};
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetManifest load_yolo_dataset(const fs::path& root, synth::Domain fallback_domain) {
  if (!fs::is_directory(root / "images"))
    throw ValidationError(fmt::format("{}: missing images/ directory", root.string()));
  DatasetManifest m;
  if (fs::exists(root / "manifest.json")) {
    m = load_manifest(root);
  } else {
    m.root = root;
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(root / "images"))
      if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    for (auto& s : stems) m.entries.push_back({std::move(s), 0, fallback_domain, std::nullopt});
  }
  for (const auto& e : m.entries) {
    if (!fs::exists(m.image_path(e)))
      throw ValidationError(fmt::format("missing image {}", m.image_path(e).string()));
    if (!fs::exists(m.label_path(e)))
      throw ValidationError(fmt::format("missing label file {}", m.label_path(e).string()));
  }
  const auto hash = compute_content_hash(m);
  if (!m.content_hash.empty() && m.content_hash != hash)
    throw ValidationError(fmt::format("{}: content hash mismatch", root.string()));
  m.content_hash = hash;
  return m;
}

DatasetManifest open_unlabeled(const fs::path& root) {
  DatasetManifest m = load_manifest(root);
  for (const auto& e : m.entries)
    if (!fs::exists(m.image_path(e)))
      throw ValidationError(fmt::format("missing image {}", m.image_path(e).string()));
  return m;
}

ValidationReport validate_dataset(const fs::path& root) {
  ValidationReport r;
  if (!fs::is_directory(root / "images") || !fs::is_directory(root / "labels")) {
    r.findings.push_back({root.string(), 0, "missing_pair", "images/ or labels/ directory missing"});
    return r;
  }
  std::vector<std::string> images, labels;
  for (const auto& e : fs::directory_iterator(root / "images"))
    if (e.path().extension() == ".png") images.push_back(e.path().stem().string());
  for (const auto& e : fs::directory_iterator(root / "labels"))
    if (e.path().extension() == ".txt") labels.push_back(e.path().stem().string());
  std::sort(images.begin(), images.end());
  std::sort(labels.begin(), labels.end());

  for (const auto& s : images)
    if (!std::binary_search(labels.begin(), labels.end(), s))
      r.findings.push_back({(root / "images" / (s + ".png")).string(), 0, "missing_pair",
                            "image has no label file"});
  for (const auto& s : labels)
    if (!std::binary_search(images.begin(), images.end(), s))
      r.findings.push_back({(root / "labels" / (s + ".txt")).string(), 0, "missing_pair",
                            "label file has no image"});

  for (const auto& s : labels) {
    const auto path = root / "labels" / (s + ".txt");
    const auto text = read_file(path);
    int lineno = 0;
    for (const auto& line : lines_of(text)) {
      ++lineno;
      if (blank(line)) continue;
      BBox b;
      if (auto f = parse_line(line, path.string(), lineno, &b)) r.findings.push_back(*f);
    }
  }

  if (fs::exists(root / "manifest.json")) {
    try {
      auto m = load_manifest(root);
      for (const auto& e : m.entries)
        if (!std::binary_search(images.begin(), images.end(), e.stem) ||
            !std::binary_search(labels.begin(), labels.end(), e.stem))
          r.findings.push_back({(root / "manifest.json").string(), 0, "manifest",
                                fmt::format("entry {} has no image/label pair", e.stem)});
      if (r.findings.empty() && !m.content_hash.empty() &&
          compute_content_hash(m) != m.content_hash)
        r.findings.push_back({(root / "manifest.json").string(), 0, "manifest",
                              "content hash does not match label files"});
    } catch (const Error& e) {
      r.findings.push_back({(root / "manifest.json").string(), 0, "manifest", e.what()});
    }
  }
  return r;
}

void LabelAudit::record(std::string stage, std::string path, synth::Domain domain) {
  records_.push_back({std::move(stage), std::move(path), domain});
}

bool LabelAudit::any_real_label_read_in(std::string_view stage_prefix) const {
  return std::any_of(records_.begin(), records_.end(), [&](const Record& r) {
    return r.domain == synth::Domain::real && std::string_view(r.stage).starts_with(stage_prefix);
  });
}

void LabelAudit::write(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& r : records_)
    out << r.stage << '\t' << synth::to_string(r.domain) << '\t' << r.path << '\n';
}

std::vector<std::vector<BBox>> read_labels(const DatasetManifest& m, LabelUse use,
                                           const std::string& stage, LabelAudit* audit) {
  if (use == LabelUse::training)
    for (const auto& e : m.entries)
      if (e.domain == synth::Domain::real)
        throw ZeroShotViolation(fmt::format(
            "stage {}: refusing to read real-domain labels ({}) for training", stage, e.stem));
  std::vector<std::vector<BBox>> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    const auto p = m.label_path(e);
    if (audit) audit->record(stage, p.string(), e.domain);
    out.push_back(parse_label_file(p));
  }
  return out;
}

cv::Mat read_image(const DatasetManifest& m, const ManifestEntry& e) {
  const auto p = m.image_path(e);
  cv::Mat img = cv::imread(p.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw IoError(fmt::format("cannot read image {}", p.string()));
  return img;
}

}  // namespace cropsim::data
