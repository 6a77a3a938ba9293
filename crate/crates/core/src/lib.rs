pub mod backends;
pub mod design;
pub mod frontends;
pub mod ir;
pub mod lint;
pub mod shape;
pub mod trace;
pub mod zoo;
