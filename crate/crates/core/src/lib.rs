pub mod decoder;
pub mod encoders;
pub mod harness;
pub mod models;
pub mod pddl;
pub mod search;
pub mod trajectory;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/tasks.md")]
    pub struct Tasks;
    #[doc = include_str!("../../../book/src/trajectories.md")]
    pub struct Trajectories;
    #[doc = include_str!("../../../book/src/embeddings.md")]
    pub struct Embeddings;
    #[doc = include_str!("../../../book/src/models.md")]
    pub struct Models;
    #[doc = include_str!("../../../book/src/decoding.md")]
    pub struct Decoding;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
}
