#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlgmp/errors.hpp"
#include "nlgmp/state_space_model.hpp"

namespace nlgmp {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& object, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (const auto& item : object.items())
        if (!allowed.count(item.key()))
            throw ParseError("unknown key \"" + item.key() + "\" in " + where, 0);
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows, const std::string& key) {
    if (!rows.is_array() || rows.empty() || !rows[0].is_array())
        throw ParseError("\"" + key + "\" must be an array of arrays", 0);
    Eigen::MatrixXd m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].is_array() || rows[i].size() != static_cast<std::size_t>(m.cols()))
            throw ParseError("\"" + key + "\" rows have inconsistent lengths", 0);
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            if (!rows[i][j].is_number())
                throw ParseError("\"" + key + "\" contains a non-numeric entry", 0);
            m(i, j) = rows[i][j].get<double>();
        }
    }
    return m;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& entries, const std::string& key) {
    if (!entries.is_array()) throw ParseError("\"" + key + "\" must be an array", 0);
    Eigen::VectorXd v(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].is_number())
            throw ParseError("\"" + key + "\" contains a non-numeric entry", 0);
        v(i) = entries[i].get<double>();
    }
    return v;
}

inline ModelFn fn_from_json(const nlohmann::json& spec, const std::string& key, int n_states,
                            int n_inputs) {
    if (spec.is_object()) {
        reject_unknown_keys(spec, {"matrix"}, "\"" + key + "\"");
        if (!spec.contains("matrix"))
            throw ParseError("\"" + key + "\" object must hold a \"matrix\" key", 0);
        return ModelFn::from_matrix(matrix_from_json(spec["matrix"], key));
    }
    if (spec.is_array()) {
        std::vector<Expr> components;
        for (const auto& entry : spec) {
            if (!entry.is_string())
                throw ParseError("\"" + key + "\" expressions must be strings", 0);
            try {
                components.push_back(Expr::parse(entry.get<std::string>(), n_states, n_inputs));
            } catch (const ParseError& e) {
                throw ParseError("in \"" + key + "\" expression \"" + entry.get<std::string>() +
                                     "\": " + e.what(),
                                 e.offset);
            }
        }
        return ModelFn::from_exprs(std::move(components));
    }
    throw ParseError("\"" + key + "\" must be an expression array or {\"matrix\": ...}", 0);
}

}  // namespace detail

/// Build a model from its JSON document. Unknown keys anywhere are rejected.
inline StateSpaceModel model_from_json(const nlohmann::json& doc) {
    detail::reject_unknown_keys(
        doc, {"state_dim", "input_dim", "obs_dim", "f", "g", "h", "Q", "R", "x0"},
        "model document");
    for (const char* key : {"state_dim", "input_dim", "obs_dim", "f", "g", "h", "Q", "R", "x0"})
        if (!doc.contains(key)) throw ParseError(std::string("missing key \"") + key + "\"", 0);

    StateSpaceModel model;
    for (const char* key : {"state_dim", "input_dim", "obs_dim"})
        if (!doc[key].is_number_integer())
            throw ParseError(std::string("\"") + key + "\" must be an integer", 0);
    model.state_dim = doc["state_dim"].get<int>();
    model.input_dim = doc["input_dim"].get<int>();
    model.obs_dim = doc["obs_dim"].get<int>();

    model.f = detail::fn_from_json(doc["f"], "f", model.state_dim, 0);
    if (!doc["g"].is_null()) model.g = detail::fn_from_json(doc["g"], "g", 0, model.input_dim);
    model.h = detail::fn_from_json(doc["h"], "h", model.state_dim, 0);
    model.Q = detail::matrix_from_json(doc["Q"], "Q");
    model.R = detail::matrix_from_json(doc["R"], "R");

    const auto& x0 = doc["x0"];
    if (!x0.is_object()) throw ParseError("\"x0\" must hold {\"mean\", \"cov\"}", 0);
    detail::reject_unknown_keys(x0, {"mean", "cov"}, "\"x0\"");
    if (!x0.contains("mean") || !x0.contains("cov"))
        throw ParseError("\"x0\" must hold both \"mean\" and \"cov\"", 0);
    model.x0_prior = GaussianMoments(detail::vector_from_json(x0["mean"], "x0.mean"),
                                     detail::matrix_from_json(x0["cov"], "x0.cov"));
    return model;
}

/// Load a model document from disk.
inline StateSpaceModel load_model(const std::string& path) {
    std::ifstream stream(path);
    if (!stream) throw ParamError("cannot open model file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(stream);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("model file is not valid JSON: ") + e.what(), e.byte);
    }
    try {
        return model_from_json(doc);
    } catch (const DimensionError& e) {
        throw ParseError(std::string("model file ") + path + ": " + e.what(), 0);
    }
}

}  // namespace nlgmp
