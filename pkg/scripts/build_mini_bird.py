#!/usr/bin/env python3
"""Regenerate the bundled mini benchmark fixture.

Builds benchmarks/mini_bird/databases/shop/shop.sqlite from the DDL below and
rewrites questions.json. The generated files are checked in; rerun this only
when the fixture itself changes, and update the expected-snapshot test data
to match.
"""

import json
import os
import sqlite3
import sys

FIXTURE_DDL = """
CREATE TABLE customer (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    city TEXT,
    signup_year INTEGER
);
CREATE TABLE product (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    category TEXT,
    price REAL NOT NULL
);
CREATE TABLE orders (
    id INTEGER PRIMARY KEY,
    customer_id INTEGER NOT NULL REFERENCES customer(id),
    product_id INTEGER NOT NULL REFERENCES product(id),
    quantity INTEGER NOT NULL,
    status TEXT,
    order_year INTEGER
);
"""

FIXTURE_ROWS = {
    "customer": [
        (1, "Alice", "Lyon", 2021),
        (2, "Bob", "Paris", 2022),
        (3, "Chloe", "Lyon", 2023),
    ],
    "product": [
        (1, "Laptop", "electronics", 1200.0),
        (2, "Phone", "electronics", 800.0),
        (3, "Desk", "furniture", 300.0),
        (4, "Chair", "furniture", 150.0),
    ],
    "orders": [
        (1, 1, 1, 1, "shipped", 2023),
        (2, 1, 2, 2, "open", 2024),
        (3, 2, 3, 1, "shipped", 2023),
        (4, 3, 4, 4, "cancelled", 2024),
        (5, 2, 2, 1, "shipped", 2024),
        (6, 3, 1, 1, "open", 2024),
    ],
}

QUESTIONS = [
    {
        "question_id": "q01",
        "db_id": "shop",
        "question": "How many customers are there?",
        "evidence": "",
        "SQL": "SELECT COUNT(*) FROM customer",
        "difficulty": "simple",
    },
    {
        "question_id": "q02",
        "db_id": "shop",
        "question": "List the names of all products.",
        "evidence": "",
        "SQL": "SELECT name FROM product",
        "difficulty": "simple",
    },
    {
        "question_id": "q03",
        "db_id": "shop",
        "question": "How many orders have status 'shipped'?",
        "evidence": "",
        "SQL": "SELECT COUNT(*) FROM orders WHERE status = 'shipped'",
        "difficulty": "simple",
    },
    {
        "question_id": "q04",
        "db_id": "shop",
        "question": "Which customers live in Lyon?",
        "evidence": "",
        "SQL": "SELECT name FROM customer WHERE city = 'Lyon'",
        "difficulty": "simple",
    },
    {
        "question_id": "q05",
        "db_id": "shop",
        "question": "What is the average product price?",
        "evidence": "",
        "SQL": "SELECT AVG(price) FROM product",
        "difficulty": "simple",
    },
    {
        "question_id": "q06",
        "db_id": "shop",
        "question": "How many orders did Alice place?",
        "evidence": "",
        "SQL": (
            "SELECT COUNT(*) FROM orders JOIN customer ON orders.customer_id = customer.id "
            "WHERE customer.name = 'Alice'"
        ),
        "difficulty": "moderate",
    },
    {
        "question_id": "q07",
        "db_id": "shop",
        "question": "List product names that were ordered with quantity greater than 1.",
        "evidence": "",
        "SQL": (
            "SELECT DISTINCT product.name FROM product JOIN orders "
            "ON orders.product_id = product.id WHERE orders.quantity > 1"
        ),
        "difficulty": "moderate",
    },
    {
        "question_id": "q08",
        "db_id": "shop",
        "question": "What is the total revenue from shipped orders?",
        "evidence": "total revenue means quantity multiplied by price",
        "SQL": (
            "SELECT SUM(orders.quantity * product.price) FROM orders JOIN product "
            "ON orders.product_id = product.id WHERE orders.status = 'shipped'"
        ),
        "difficulty": "moderate",
    },
    {
        "question_id": "q09",
        "db_id": "shop",
        "question": "For each order status, how many orders are there?",
        "evidence": "",
        "SQL": "SELECT status, COUNT(*) FROM orders GROUP BY status",
        "difficulty": "moderate",
    },
    {
        "question_id": "q10",
        "db_id": "shop",
        "question": "Which customer spent the most in total across their orders?",
        "evidence": "spending is quantity multiplied by price",
        "SQL": (
            "SELECT customer.name FROM customer "
            "JOIN orders ON orders.customer_id = customer.id "
            "JOIN product ON orders.product_id = product.id "
            "GROUP BY customer.id, customer.name "
            "ORDER BY SUM(orders.quantity * product.price) DESC LIMIT 1"
        ),
        "difficulty": "challenging",
    },
]


def build_database(path: str) -> None:
    if os.path.exists(path):
        os.remove(path)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    conn = sqlite3.connect(path)
    try:
        conn.executescript(FIXTURE_DDL)
        for table, rows in FIXTURE_ROWS.items():
            placeholders = ",".join("?" * len(rows[0]))
            conn.executemany(f"INSERT INTO {table} VALUES ({placeholders})", rows)
        conn.commit()
        for item in QUESTIONS:
            cur = conn.execute(item["SQL"])
            got = cur.fetchall()
            print(f"{item['question_id']}: {got}")
    finally:
        conn.close()


def main() -> None:
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    dataset_dir = os.path.join(root, "benchmarks", "mini_bird")
    build_database(os.path.join(dataset_dir, "databases", "shop", "shop.sqlite"))
    with open(os.path.join(dataset_dir, "questions.json"), "w", encoding="utf-8") as fh:
        json.dump(QUESTIONS, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    print(f"fixture written under {dataset_dir}")


if __name__ == "__main__":
    sys.exit(main())
