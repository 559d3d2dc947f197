pub mod agents;
pub mod backends;
pub mod benchmark;
pub mod cli;
pub mod consensus;
pub mod discussion;
pub mod logic_tree;
pub mod prompt_kit;
pub mod question;
pub mod synthetic;
