//! JSON formats accepted and produced by the command-line tool.

use serde_json::{json, Value};

fn matrix() -> Value {
    json!({
        "type": "object",
        "required": ["dim", "re", "im"],
        "properties": {
            "dim": { "type": "integer", "minimum": 1 },
            "re": { "type": "array", "items": { "type": "array", "items": { "type": "number" } } },
            "im": { "type": "array", "items": { "type": "array", "items": { "type": "number" } } }
        },
        "description": "row-major d x d complex matrix"
    })
}

pub fn schemas() -> Value {
    let m = json!({ "$ref": "#/definitions/matrix" });
    let gen = json!({
        "oneOf": [
            { "type": "object", "properties": { "kind": { "const": "id" } }, "required": ["kind"] },
            { "type": "object", "properties": { "kind": { "const": "clock" }, "power": { "type": "integer", "default": 1 } }, "required": ["kind"] },
            { "type": "object", "properties": { "kind": { "const": "shift" }, "power": { "type": "integer", "default": 1 } }, "required": ["kind"] },
            { "type": "object", "properties": { "kind": { "const": "dense" }, "matrix": m }, "required": ["kind", "matrix"] }
        ]
    });
    json!({
        "definitions": {
            "matrix": matrix(),
            "supernatural": {
                "type": "object",
                "required": ["exponents"],
                "properties": { "exponents": { "type": "object", "additionalProperties": { "oneOf": [{ "type": "integer" }, { "const": "inf" }] } } },
                "example": { "exponents": { "2": 1, "3": 1, "5": "inf" } }
            },
            "truncation": {
                "type": "object",
                "required": ["factors"],
                "properties": { "factors": { "type": "array", "items": { "type": "integer", "minimum": 2 } } },
                "example": { "factors": [2, 3, 5, 5, 5] }
            },
            "factor_generator": gen,
            "action_spec": {
                "type": "object",
                "required": ["trunc", "gen1", "gen2"],
                "properties": {
                    "trunc": { "$ref": "#/definitions/truncation" },
                    "gen1": { "type": "array", "items": { "$ref": "#/definitions/factor_generator" } },
                    "gen2": { "type": "array", "items": { "$ref": "#/definitions/factor_generator" } }
                }
            },
            "model_spec": {
                "type": "object",
                "properties": {
                    "f": { "type": "object", "additionalProperties": { "type": "integer" } },
                    "L1": { "type": "array", "items": { "type": "integer" } },
                    "L2": { "type": "array", "items": { "type": "integer" } },
                    "trunc": { "$ref": "#/definitions/truncation" },
                    "sn": { "$ref": "#/definitions/supernatural" }
                },
                "example": { "f": { "2": 1, "3": 2 }, "sn": { "exponents": { "2": 1, "3": 1, "5": "inf" } } }
            },
            "cocycle": {
                "type": "object",
                "required": ["u1", "u2"],
                "properties": { "u1": m, "u2": m }
            },
            "loop": {
                "type": "object",
                "required": ["times", "samples"],
                "properties": {
                    "times": { "type": "array", "items": { "type": "number" } },
                    "samples": { "type": "array", "items": m }
                },
                "description": "closed loop of unitaries based at 1, sampled at increasing times from 0 to 1"
            },
            "config": {
                "type": "object",
                "description": "numerical tolerances; every field is optional",
                "properties": {
                    "unitarity_tol": { "type": "number" },
                    "branch_guard": { "type": "number" },
                    "cluster_tol": { "type": "number" },
                    "singular_tol": { "type": "number" },
                    "lattice_tol": { "type": "number" },
                    "integer_tol": { "type": "number" },
                    "delta0": { "type": "number" },
                    "invariant_sign": { "type": "integer" },
                    "homotopy_ratio": { "type": "number" },
                    "samples_per_side": { "type": "integer" },
                    "boundary_lip_max": { "type": "number" },
                    "ambiguity_tol": { "type": "number" },
                    "exact_tol": { "type": "number" },
                    "record_timing": { "type": "boolean" }
                }
            }
        },
        "outputs": {
            "bott": { "bott": "integer", "commutator_norm": "number", "residual": "number" },
            "kappa": { "kappa": { "integer": "integer", "tau_value": "p/q", "residual": "number" }, "defect": "number", "admissible": "boolean" },
            "invariant": { "<prime>": "residue in Z/theta(p)", "reports": "per prime: block, winding, residue, commutation_bound, x_commutator" },
            "towers": { "tower": "shape, factors, heights, protected", "report": "sum_defect, projection_defect, shift_defect, commutator_max, max_defect, eps, passed" },
            "vanish": { "report": { "eps_target": "number", "eps_achieved": ["number", "number"], "commutator_max": "number", "budget": "object or null" } },
            "shrink": { "knots": "integer", "c": "number", "c_prime": "number", "lip": "number", "max_error": "number" },
            "extend": { "boundary": "lip_estimate, conditions", "disk": "method, knots, c, c_prime, lip_estimate, restriction_error, guard" },
            "match": { "invariants": "per-prime comparison", "report": "eps, defect, lambda_turns, kappa_corrections, kappa_after, vanish" },
            "ek": { "rounds": "per round: round, side, matcher_defect, vanish_eps, cocycle_size, kappa_corrections, choice, wall_time", "monotone": "boolean", "final_defect": "number" },
            "selftest": { "seed": "integer", "criteria": "per criterion: id, name, passed, detail", "passed": "boolean" },
            "error": { "error": "message, or the obstruction name with its fields and a message" }
        }
    })
}
