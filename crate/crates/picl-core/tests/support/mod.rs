pub mod desk_scale;
pub mod gradcheck;
pub mod oracles;
