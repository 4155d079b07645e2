use std::net::{IpAddr, Ipv4Addr};
use std::time::Duration;

use colier_client::{IdentityFile, Notification, WsClient};
use colier_core::document::{DocAction, LayerId, PathCommand};
use colier_core::protocol::Presence;
use colier_server::{Server, ServerConfig, DEFAULT_SESSION_ID};

async fn start(data: &std::path::Path) -> (String, tokio::sync::oneshot::Sender<()>) {
    let mut config = ServerConfig::new(data);
    config.host = IpAddr::V4(Ipv4Addr::LOCALHOST);
    config.port = 0;
    let server = Server::bind(config).await.unwrap();
    let endpoint = format!("ws://{}/ws", server.local_addr().unwrap());
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(server.run_until(async {
        let _ = stopped.await;
    }));
    (endpoint, stop)
}

async fn until(client: &mut WsClient, mut pred: impl FnMut(&Notification) -> bool) {
    tokio::time::timeout(Duration::from_secs(5), async {
        loop {
            let up = client.recv().await.unwrap();
            if up.notifications.iter().any(&mut pred) {
                return;
            }
        }
    })
    .await
    .expect("timed out");
}

#[tokio::test]
async fn stroke_propagates_and_reconnect_keeps_identity() {
    let data = tempfile::tempdir().unwrap();
    let ids = tempfile::tempdir().unwrap();
    let (endpoint, stop) = start(data.path()).await;
    let mut a_ids = IdentityFile::open(ids.path().join("a.json")).unwrap();
    let mut b_ids = IdentityFile::open(ids.path().join("b.json")).unwrap();

    let mut a = WsClient::join(&endpoint, DEFAULT_SESSION_ID, &mut a_ids).await.unwrap();
    let mut b = WsClient::join(&endpoint, DEFAULT_SESSION_ID, &mut b_ids).await.unwrap();
    assert_eq!(a.overview()[0].session_id, DEFAULT_SESSION_ID);
    let a_id = a.core().store().client_id().unwrap().clone();
    let a_color = a.core().store().color().unwrap();
    assert_eq!(a_ids.get(&endpoint, DEFAULT_SESSION_ID).unwrap().client_id, a_id);

    a.submit_change(DocAction::AddLayer { layer_id: None, name: "ink".into(), asset: None }, 1).await.unwrap();
    a.settle().await.unwrap();
    let stroke = DocAction::NewPath {
        layer_id: Some(LayerId::for_seq(1)),
        stroke_id: None,
        color: a_color,
        width: 10.0,
        path: vec![PathCommand::MoveTo { x: 446.99, y: 38.0 }, PathCommand::LineTo { x: 453.01, y: 39.0 }],
    };
    a.submit_change(stroke, 2).await.unwrap();
    a.settle().await.unwrap();
    until(&mut b, |n| matches!(n, Notification::Applied(e) if e.seq == 2)).await;
    assert_eq!(b.core().store().document(), a.core().store().document());

    a.send_presence(Presence::Cursor { x: 3.0, y: 4.0 }).await.unwrap();
    until(&mut b, |n| matches!(n, Notification::Presence(id) if *id == a_id)).await;
    assert_eq!(b.core().store().presence()[&a_id].color, Some(a_color));

    // a drops; b keeps editing
    a.close().await;
    for i in 0..10 {
        b.submit_change(DocAction::AddLayer { layer_id: None, name: format!("b{i}"), asset: None }, 10 + i).await.unwrap();
    }
    b.settle().await.unwrap();

    let mut a_ids = IdentityFile::open(ids.path().join("a.json")).unwrap();
    let a = WsClient::join(&endpoint, DEFAULT_SESSION_ID, &mut a_ids).await.unwrap();
    assert_eq!(a.core().store().client_id(), Some(&a_id));
    assert_eq!(a.core().store().color(), Some(a_color));
    assert_eq!(a.core().store().last_seq(), 12);
    assert_eq!(a.core().store().document().canonical_bytes(), b.core().store().document().canonical_bytes());

    let a = a.reconnect(&mut a_ids).await.unwrap();
    assert_eq!(a.core().store().color(), Some(a_color));
    stop.send(()).unwrap();
}

#[tokio::test]
async fn fresh_identity_without_a_stored_one() {
    let data = tempfile::tempdir().unwrap();
    let ids = tempfile::tempdir().unwrap();
    let (endpoint, stop) = start(data.path()).await;
    let mut f1 = IdentityFile::open(ids.path().join("1.json")).unwrap();
    let mut f2 = IdentityFile::open(ids.path().join("2.json")).unwrap();
    let one = WsClient::join(&endpoint, DEFAULT_SESSION_ID, &mut f1).await.unwrap();
    let two = WsClient::join(&endpoint, DEFAULT_SESSION_ID, &mut f2).await.unwrap();
    assert_ne!(one.core().store().client_id(), two.core().store().client_id());
    assert_ne!(one.core().store().color(), two.core().store().color());
    stop.send(()).unwrap();
}
