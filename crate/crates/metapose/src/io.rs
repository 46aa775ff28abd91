//! Scene and model files (stub).
