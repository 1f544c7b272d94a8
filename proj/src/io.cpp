#include "unimd/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace unimd {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'U', 'N', 'I', 'M', 'D', 'C', 'K', '1'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

void put_f32(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f32(const std::string& in, std::size_t pos) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return static_cast<double>(std::bit_cast<float>(bits));
}

json box_json(const Box& b) { return json::array({b.cx, b.cy, b.w, b.h}); }

Box json_box(const json& j) {
    if (!j.is_array() || j.size() != 4) throw ValidationError("box must be [cx, cy, w, h]");
    return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::string frame_name(const char* prefix, std::size_t t) {
    std::ostringstream os;
    os << prefix << std::setw(4) << std::setfill('0') << t << ".ppm";
    return os.str();
}

std::string ppm_bytes(const Tensor& img) {
    const std::size_t h = img.shape()[0], w = img.shape()[1];
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (double v : img.values()) out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    return out;
}

Tensor read_ppm(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    std::istringstream in(bytes);
    std::string magic;
    std::size_t w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    if (magic != "P6" || maxv != 255 || w == 0 || h == 0) throw ValidationError("not a binary PPM: " + path.string());
    const std::size_t start = static_cast<std::size_t>(in.tellg()) + 1;
    if (bytes.size() < start + w * h * 3) throw ValidationError("truncated PPM: " + path.string());
    Tensor img({h, w, 3});
    for (std::size_t i = 0; i < w * h * 3; ++i) img[i] = static_cast<unsigned char>(bytes[start + i]);
    return img;
}

Model load_params(const json& manifest, const std::string& bytes, std::size_t payload);

}  // namespace

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed for " + path.string());
}

std::string checkpoint_bytes(const Model& model) {
    json manifest;
    manifest["format"] = "unimd-checkpoint";
    manifest["version"] = 1;
    manifest["config"] = model.config().to_text();
    json params = json::array();
    std::size_t offset = 0;
    for (const ParamTensor& p : model.ps.all()) {
        params.push_back({{"name", p.name},
                          {"shape", p.value.shape()},
                          {"trainable", p.trainable},
                          {"offset", offset}});
        offset += p.value.size() * 4;
    }
    manifest["params"] = std::move(params);
    const std::string header = manifest.dump();
    std::string out(kMagic, sizeof kMagic);
    put_u64(out, header.size());
    out += header;
    out.reserve(out.size() + offset);
    for (const ParamTensor& p : model.ps.all()) {
        for (double v : p.value.values()) put_f32(out, v);
    }
    return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    write_file(path, checkpoint_bytes(model));
}

Model model_from_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw ValidationError("checkpoint: bad magic");
    }
    const std::uint64_t len = get_u64(bytes, 8);
    if (bytes.size() < 16 + len) throw ValidationError("checkpoint: truncated manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.substr(16, len));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
    }
    if (manifest.value("format", "") != "unimd-checkpoint") throw ValidationError("checkpoint: unknown format");
    try {
        return load_params(manifest, bytes, 16 + len);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
}

namespace {

Model load_params(const json& manifest, const std::string& bytes, std::size_t payload) {
    Model model = Model::create(Config::parse(manifest.at("config").get<std::string>()));
    const auto& params = manifest.at("params");
    if (params.size() != model.ps.size()) throw ValidationError("checkpoint: parameter count differs from config");
    std::vector<bool> seen(model.ps.size(), false);
    for (const json& e : params) {
        const std::string name = e.at("name").get<std::string>();
        const auto id = model.ps.find(name);
        if (!id) throw ValidationError("checkpoint: unknown parameter " + name);
        if (seen[*id]) throw ValidationError("checkpoint: duplicate parameter " + name);
        seen[*id] = true;
        ParamTensor& p = model.ps[*id];
        if (e.at("shape").get<std::vector<std::size_t>>() != p.value.shape() ||
            e.at("trainable").get<bool>() != p.trainable) {
            throw ValidationError("checkpoint: shape or partition mismatch for " + name);
        }
        const std::size_t off = payload + e.at("offset").get<std::size_t>();
        if (bytes.size() < off + p.value.size() * 4) throw ValidationError("checkpoint: truncated payload");
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = get_f32(bytes, off + 4 * i);
    }
    return model;
}

}  // namespace

Model load_checkpoint(const std::filesystem::path& path) { return model_from_checkpoint(read_file(path)); }

std::string run_to_json(const TrackerRun& run) {
    json j;
    j["sequence_id"] = run.sequence_id;
    j["scenario"] = to_string(run.scenario);
    j["modality"] = to_string(run.modality);
    json boxes = json::array(), gt = json::array();
    for (const Box& b : run.boxes) boxes.push_back(box_json(b));
    for (const Box& b : run.gt) gt.push_back(box_json(b));
    j["boxes"] = std::move(boxes);
    j["gt"] = std::move(gt);
    j["ious"] = run.ious;
    j["occluded"] = run.occluded;
    j["bank_trace"] = run.bank_trace;
    j["dsf_norms"] = run.dsf_norms;
    j["token_counts"] = run.token_counts;
    return j.dump(1) + "\n";
}

TrackerRun run_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        TrackerRun run;
        run.sequence_id = j.at("sequence_id").get<std::string>();
        run.scenario = scenario_from_string(j.at("scenario").get<std::string>());
        run.modality = modality_from_string(j.at("modality").get<std::string>());
        for (const json& b : j.at("boxes")) run.boxes.push_back(json_box(b));
        for (const json& b : j.at("gt")) run.gt.push_back(json_box(b));
        run.ious = j.at("ious").get<std::vector<double>>();
        run.occluded = j.value("occluded", std::vector<bool>{});
        run.bank_trace = j.value("bank_trace", std::vector<std::vector<int>>{});
        run.dsf_norms = j.value("dsf_norms", std::vector<std::vector<double>>{});
        run.token_counts = j.value("token_counts", std::vector<std::size_t>{});
        return run;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("run file: ") + e.what());
    }
}

void save_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json meta;
    meta["scenario"] = to_string(seq.scenario);
    meta["modality"] = to_string(seq.modality);
    meta["seed"] = seq.seed;
    meta["length"] = seq.length();
    json gt = json::array();
    for (const Box& b : seq.gt_boxes) gt.push_back(box_json(b));
    meta["gt_boxes"] = std::move(gt);
    meta["visibility"] = seq.visibility;
    meta["occluded"] = seq.occluded;
    if (!seq.frames.empty() && seq.frames[0].text) meta["text"] = seq.frames[0].text->values();
    for (std::size_t t = 0; t < seq.length(); ++t) {
        write_file(dir / frame_name("frame_", t), ppm_bytes(seq.frames[t].rgb));
        if (seq.frames[t].aux) write_file(dir / frame_name("aux_", t), ppm_bytes(*seq.frames[t].aux));
    }
    write_file(dir / "meta.json", meta.dump(1) + "\n");
}

SyntheticSequence load_sequence(const std::filesystem::path& dir) {
    json meta;
    try {
        meta = json::parse(read_file(dir / "meta.json"));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("sequence meta: ") + e.what());
    }
    SyntheticSequence seq;
    seq.scenario = scenario_from_string(meta.at("scenario").get<std::string>());
    seq.modality = modality_from_string(meta.at("modality").get<std::string>());
    seq.seed = meta.at("seed").get<std::uint64_t>();
    const auto n = meta.at("length").get<std::size_t>();
    for (const json& b : meta.at("gt_boxes")) seq.gt_boxes.push_back(json_box(b));
    seq.visibility = meta.at("visibility").get<std::vector<double>>();
    seq.occluded = meta.at("occluded").get<std::vector<bool>>();
    std::optional<Tensor> text;
    if (meta.contains("text")) {
        const auto v = meta.at("text").get<std::vector<double>>();
        text = Tensor({v.size()}, v);
    }
    if (seq.gt_boxes.size() != n) throw ValidationError("sequence meta: gt count differs from length");
    for (std::size_t t = 0; t < n; ++t) {
        MultiModalFrame f;
        f.modality = seq.modality;
        f.rgb = read_ppm(dir / frame_name("frame_", t));
        if (has_aux(seq.modality)) f.aux = read_ppm(dir / frame_name("aux_", t));
        f.text = text;
        f.validate();
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

}  // namespace unimd
