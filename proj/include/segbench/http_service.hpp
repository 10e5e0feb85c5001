#pragma once

// HTTP+JSON binding of the navigation session service (cpp-httplib).

// Eigen must come before httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "segbench/png.hpp"
#include "segbench/service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <string>

namespace segbench::nav {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, {{"error", msg}, {"status", status}});
}

inline nlohmann::json parse_body(const httplib::Request& req) {
    try {
        auto j = nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body);
        if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ServiceError(400, std::string("malformed JSON body: ") + e.what());
    }
}

inline Vec3 vec3_from(const nlohmann::json& j, const char* field) {
    if (!j.contains(field) || !j[field].is_array() || j[field].size() != 3)
        throw ServiceError(400, std::string("'") + field + "' must be an array of 3 numbers");
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
        if (!j[field][i].is_number()) throw ServiceError(400, std::string("'") + field + "' must hold numbers");
        v[i] = j[field][i].get<double>();
    }
    return v;
}

/// Runs a handler, translating library and service errors into statuses.
template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const ServiceError& e) {
        send_error(res, e.status(), e.what());
    } catch (const InvalidArgument& e) {
        send_error(res, 400, e.what());
    } catch (const ParseError& e) {
        send_error(res, 400, e.what());
    } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

inline std::optional<double> query_number(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    const std::string v = req.get_param_value(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ServiceError(400, std::string("query parameter '") + key + "' is not a number");
    }
}

}  // namespace detail

/// Registers the session routes on `server`. The store must outlive it.
///
///   POST /sessions                 {"sweep_dir": p} | {"volume_path": p}, optional "spacing"
///   GET  /sessions/{id}            session summary
///   GET  /sessions/{id}/slice      ?axis=x|y|z&index=i[&level=l&width=w]  -> PNG, geometry in X-Slice-Geometry
///   PUT  /sessions/{id}/roi        {"min": [..], "max": [..]}
///   POST /sessions/{id}/segment    {"predictor": spec, "threshold": t?}
///   POST /sessions/{id}/edits      {"kind": "paint"|"erase", "center": [..], "radius": r}
///   POST /sessions/{id}/export     {"out_dir": p, "gt_mask_path": p?}
inline void register_routes(httplib::Server& server, SessionStore& store) {
    using detail::guarded;
    using detail::send_json;

    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                                {"Access-Control-Expose-Headers", "X-Slice-Geometry"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = detail::parse_body(req);
            std::optional<double> spacing;
            if (body.contains("spacing")) spacing = body.at("spacing").get<double>();
            std::string source;
            if (body.contains("sweep_dir")) source = body.at("sweep_dir").get<std::string>();
            else if (body.contains("volume_path")) source = body.at("volume_path").get<std::string>();
            else throw ServiceError(400, "expected 'sweep_dir' or 'volume_path'");
            const auto id = store.create_session(source, spacing);
            send_json(res, 200, store.info(id));
        });
    });

    server.Get(R"(/sessions/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, store.info(req.matches[1])); });
    });

    server.Get(R"(/sessions/([^/]+)/slice)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string axis = req.get_param_value("axis");
            if (axis.size() != 1) throw ServiceError(400, "axis must be x, y or z");
            const auto index = detail::query_number(req, "index");
            if (!index || *index != std::floor(*index)) throw ServiceError(400, "integer 'index' required");
            const auto img = store.get_slice(req.matches[1], axis[0], static_cast<std::int64_t>(*index),
                                             detail::query_number(req, "level"), detail::query_number(req, "width"));
            res.status = 200;
            res.set_header("X-Slice-Geometry", img.geometry.dump());
            res.set_content(png::encode(img.width, img.height, img.channels, img.pixels), "image/png");
        });
    });

    server.Put(R"(/sessions/([^/]+)/roi)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = detail::parse_body(req);
            const Vec3 lo = detail::vec3_from(body, "min"), hi = detail::vec3_from(body, "max");
            if ((lo.array() > hi.array()).any()) throw ServiceError(422, "box min must not exceed max");
            const BoundingBox eff = store.set_roi(req.matches[1], BoundingBox{lo, hi});
            send_json(res, 200, {{"draft", box_json(BoundingBox{lo, hi})}, {"effective", box_json(eff)},
                                 {"margin_mm", kRoiMarginMm}});
        });
    });

    server.Post(R"(/sessions/([^/]+)/segment)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = detail::parse_body(req);
            PredictorHandle h;
            if (body.contains("predictor")) {
                const auto& p = body.at("predictor");
                h = p.is_string() ? PredictorHandle::parse(p.get<std::string>()) : PredictorHandle::from_json(p);
            }
            std::optional<double> tau;
            if (body.contains("threshold") && !body.at("threshold").is_null()) tau = body.at("threshold").get<double>();
            const auto sum = store.run_segmentation(req.matches[1], h, tau);
            auto j = summary_json(sum);
            j["predictor"] = h.name();
            send_json(res, 200, j);
        });
    });

    server.Post(R"(/sessions/([^/]+)/edits)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = detail::parse_body(req);
            EditOp op;
            const std::string kind = body.value("kind", std::string());
            if (kind == "paint") op.kind = EditKind::paint;
            else if (kind == "erase") op.kind = EditKind::erase;
            else throw ServiceError(400, "edit kind must be 'paint' or 'erase'");
            op.center = detail::vec3_from(body, "center");
            if (!body.contains("radius") || !body.at("radius").is_number())
                throw ServiceError(400, "numeric 'radius' required");
            op.radius = body.at("radius").get<double>();
            send_json(res, 200, summary_json(store.apply_edit(req.matches[1], op)));
        });
    });

    server.Post(R"(/sessions/([^/]+)/export)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = detail::parse_body(req);
            if (!body.contains("out_dir")) throw ServiceError(400, "'out_dir' required");
            std::optional<fs::path> gt;
            if (body.contains("gt_mask_path") && !body.at("gt_mask_path").is_null())
                gt = body.at("gt_mask_path").get<std::string>();
            const auto r = store.export_case(req.matches[1], body.at("out_dir").get<std::string>(), gt);
            nlohmann::json j;
            j["files"] = nlohmann::json::array();
            for (const auto& f : r.files) j["files"].push_back(f.string());
            j["metrics"] = r.metrics ? nlohmann::json(*r.metrics) : nlohmann::json(nullptr);
            send_json(res, 200, j);
        });
    });
}

}  // namespace segbench::nav
