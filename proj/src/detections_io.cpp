#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "collabod/eval.hpp"
#include "collabod/tensor.hpp"

namespace collabod::eval {
namespace {

using json = nlohmann::json;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <class F>
void for_each_line(const std::string& text, F&& f) {
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            f(json::parse(line));
        } catch (const json::exception& e) {
            throw Error("line " + std::to_string(n) + ": " + e.what());
        } catch (const Error& e) {
            throw Error("line " + std::to_string(n) + ": " + e.what());
        }
    }
}

Box parse_box(const json& j) {
    if (!j.is_array() || j.size() != 4) throw Error("\"box\" must be an array of 4 numbers");
    Box b{j[0].get<float>(), j[1].get<float>(), j[2].get<float>(), j[3].get<float>()};
    if (!(std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2)))
        throw Error("box coordinates must be finite");
    return b;
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    // Avoid printing "-0.000000".
    if (std::string(buf) == "-0.000000") return "0.000000";
    return buf;
}

json optional_value(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<ScoredBox> parse_detections(const std::string& text) {
    std::vector<ScoredBox> out;
    for_each_line(text, [&](const json& j) {
        ScoredBox d;
        d.image = j.at("image").get<std::string>();
        d.box = parse_box(j.at("box"));
        d.class_id = j.at("class").get<int>();
        d.score = j.at("score").get<double>();
        if (d.class_id < 0) throw Error("negative class id");
        if (!(d.box.x1 <= d.box.x2 && d.box.y1 <= d.box.y2)) throw Error("detection box has x1 > x2 or y1 > y2");
        out.push_back(std::move(d));
    });
    return out;
}

std::vector<GroundTruth> parse_ground_truth(const std::string& text) {
    std::vector<GroundTruth> out;
    for_each_line(text, [&](const json& j) {
        GroundTruth g;
        g.image = j.at("image").get<std::string>();
        g.box = parse_box(j.at("box"));
        g.class_id = j.at("class").get<int>();
        if (g.class_id < 0) throw Error("negative class id");
        if (!(g.box.x1 < g.box.x2 && g.box.y1 < g.box.y2))
            throw Error("ground-truth box must satisfy x1 < x2 and y1 < y2");
        out.push_back(std::move(g));
    });
    return out;
}

std::vector<ScoredBox> read_detections(const std::string& path) {
    try {
        return parse_detections(read_file(path));
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

std::vector<GroundTruth> read_ground_truth(const std::string& path) {
    try {
        return parse_ground_truth(read_file(path));
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

std::string format_detection(const ScoredBox& d) {
    return "{\"image\": " + json(d.image).dump() + ", \"box\": [" + fixed6(d.box.x1) + ", " +
           fixed6(d.box.y1) + ", " + fixed6(d.box.x2) + ", " + fixed6(d.box.y2) +
           "], \"class\": " + std::to_string(d.class_id) + ", \"score\": " + fixed6(d.score) + "}";
}

std::string summary_json(const ApSummary& s) {
    json j;
    j["AP50"] = s.ap50;
    j["AP75"] = s.ap75;
    j["AP50_95"] = s.ap50_95;
    j["AP_S"] = optional_value(s.ap_small);
    j["AP_M"] = optional_value(s.ap_medium);
    j["AP_L"] = optional_value(s.ap_large);
    j["per_threshold"] = s.per_threshold;
    json per_class = json::object();
    for (const auto& [cls, v] : s.per_class) per_class[std::to_string(cls)] = v;
    j["per_class"] = per_class;
    j["images"] = s.num_images;
    j["ground_truth"] = s.num_gt;
    j["detections"] = s.num_dets;
    return j.dump(2);
}

std::string summary_text(const ApSummary& s) {
    auto fmt = [](const std::optional<double>& v) { return v ? fixed6(*v) : std::string("n/a"); };
    std::ostringstream out;
    out << "images " << s.num_images << "  ground truth " << s.num_gt << "  detections " << s.num_dets << "\n";
    out << "AP50     " << fixed6(s.ap50) << "\n";
    out << "AP75     " << fixed6(s.ap75) << "\n";
    out << "AP50:95  " << fixed6(s.ap50_95) << "\n";
    out << "AP_S     " << fmt(s.ap_small) << "\n";
    out << "AP_M     " << fmt(s.ap_medium) << "\n";
    out << "AP_L     " << fmt(s.ap_large) << "\n";
    return out.str();
}

}  // namespace collabod::eval
