pub mod call;
pub mod event;
pub mod sim;
pub mod observer;
pub mod agent;
pub mod script;
pub mod dataset;
pub mod session;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;
